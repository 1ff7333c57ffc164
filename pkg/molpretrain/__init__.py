import datetime
import os

name = "molpretrain"
package_name = "molpretrain"
author = "molpretrain developers"
description = "Desk-scale SMILES transformer pretraining and evaluation"
url = "https://github.com/molpretrain/molpretrain"
project_urls = {
    "Source Code": "https://github.com/molpretrain/molpretrain",
}
copyright = f"Copyright {datetime.date.today().strftime('%Y')}, molpretrain developers"
version = "0.1.0"

# BLAS reads these at import time, so they have to be set before numpy loads.
_threads = os.environ.get("MOLPRETRAIN_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
