from molpretrain.chem import canonicalize, fragments, heavy_atom_count, largest_fragment, parse_smiles


def test_salt_is_stripped():
    part = largest_fragment(parse_smiles("[Na+].CC(=O)[O-]"))
    assert heavy_atom_count(part) == 4
    assert canonicalize(part) == canonicalize("CC(=O)[O-]")


def test_single_fragment_is_unchanged():
    mol = parse_smiles("c1ccccc1O")
    assert largest_fragment(mol) is mol


def test_solvent_is_stripped():
    assert canonicalize(largest_fragment(parse_smiles("O.O.CCO"))) == canonicalize("CCO")


def test_fragments_split_components():
    parts = fragments(parse_smiles("CC.O.N"))
    assert sorted(heavy_atom_count(p) for p in parts) == [1, 1, 2]
