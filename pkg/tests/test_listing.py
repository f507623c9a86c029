import pytest

from rinser.listing import (
    ApiEntry,
    CatalogError,
    ListingError,
    classify_call_target,
    load_api_catalog,
    parse_listing,
    parse_operand,
    register_family,
    render_listing,
    render_operand,
)

from fixtureutil import fixture_text, load_fixture


def test_parse_basic_function():
    listing = load_fixture("findresource.rdl")
    assert len(listing.functions) == 1
    fn = listing.functions[0]
    assert fn.name == "load_resource"
    assert len(fn.instructions) == 9
    assert fn.instructions[0].address == 0x401000
    assert fn.instructions[0].mnemonic == "push"
    assert fn.instructions[0].annotation == "lpType"
    assert fn.instructions[2].annotation is None
    assert fn.instructions[-1].mnemonic == "call"
    assert fn.address_range == (0x401000, 0x40100F)


def test_comments_and_blank_lines_between_functions():
    text = "# header comment\n\nFUNCTION a\n401000: nop\nEND\n\n# more\nFUNCTION b\n402000: nop\nEND\n"
    listing = parse_listing(text)
    assert [f.name for f in listing.functions] == ["a", "b"]


def test_render_parse_fixpoint():
    for name in (
        "findresource.rdl",
        "regdeletekey.rdl",
        "obfuscated.rdl",
        "robustness.rdl",
    ):
        canonical = render_listing(load_fixture(name))
        assert render_listing(parse_listing(canonical)) == canonical


def test_render_canonicalizes_case_and_spacing():
    text = "FUNCTION f\n401000: MOV EAX,  [EBP+0f6ah]\n401003: push 6 ; lpType\nEND\n"
    rendered = render_listing(parse_listing(text))
    assert "401000: mov eax, [ebp+0F6Ah]" in rendered
    assert "401003: push 6 ; lpType" in rendered


def test_operand_kinds():
    assert parse_operand("eax").kind == "register"
    assert parse_operand("EAX").register == "eax"
    assert parse_operand("10").kind == "immediate"
    assert parse_operand("10").value == 10
    assert parse_operand("-4").value == -4
    op = parse_operand("10h")
    assert (op.kind, op.value, op.raw) == ("hex", 16, "10")
    assert parse_operand("0Ch").raw == "C"
    assert parse_operand("0FFFFFFF8h").raw == "FFFFFFF8"
    mem = parse_operand("[ebp+10h+var_C]")
    assert mem.kind == "mem"
    assert [t.kind for t in mem.terms] == ["register", "hex", "symbol"]
    assert mem.signs == (1, 1, 1)
    assert parse_operand("[esi-4]").signs == (1, -1)
    off = parse_operand("offset aSubKey")
    assert (off.kind, off.prefix, off.name) == ("symbol", "offset", "aSubKey")
    assert parse_operand("loc_401020").kind == "label"
    assert parse_operand("sub_403EBC").prefix == "sub_"
    assert parse_operand("aSubKey").prefix == "named"


def test_register_families():
    assert register_family("ax") == "eax"
    assert register_family("AL") == "eax"
    assert register_family("si") == "esi"
    assert register_family("edi") == "edi"
    mem = parse_operand("[ebp+esi-2]")
    assert mem.register_families() == {"ebp", "esi"}


def test_render_operand_round_trip():
    for text in ("eax", "6", "-4", "10h", "0F6Ah", "[ebp+10h+var_C]",
                 "[esi-4]", "offset aSubKey", "loc_401020", "sub_403EBC"):
        assert render_operand(parse_operand(text)) == text


def test_blank_line_inside_body_is_an_error():
    text = "FUNCTION f\n401000: nop\n\n401003: nop\nEND\n"
    with pytest.raises(ListingError) as err:
        parse_listing(text)
    assert err.value.line == 3
    assert str(err.value).startswith("line 3:")


def test_missing_end_is_an_error():
    with pytest.raises(ListingError, match="missing END"):
        parse_listing("FUNCTION f\n401000: nop\n")


def test_duplicate_function_name_is_an_error():
    text = "FUNCTION f\n401000: nop\nEND\nFUNCTION F\n402000: nop\nEND\n"
    with pytest.raises(ListingError, match="duplicate"):
        parse_listing(text)


def test_non_increasing_address_is_an_error():
    text = "FUNCTION f\n401003: nop\n401003: nop\nEND\n"
    with pytest.raises(ListingError, match="does not increase"):
        parse_listing(text)


def test_overlapping_ranges_are_an_error():
    text = (
        "FUNCTION a\n401000: nop\n401010: nop\nEND\n"
        "FUNCTION b\n401008: nop\n401020: nop\nEND\n"
    )
    with pytest.raises(ListingError, match="overlapping"):
        parse_listing(text)


def test_empty_listing_is_an_error():
    with pytest.raises(ListingError, match="no functions"):
        parse_listing("# only a comment\n")


def test_malformed_lines_carry_line_numbers():
    with pytest.raises(ListingError) as err:
        parse_listing("FUNCTION f\nnot an instruction\nEND\n")
    assert err.value.line == 2
    with pytest.raises(ListingError):
        parse_listing("FUNCTION f\n401000: push eax ;hKey\nEND\n")  # ';' needs spaces
    with pytest.raises(ListingError, match="requires a name"):
        parse_listing("FUNCTION\n401000: nop\nEND\n")


def test_catalog_load_and_lookup(catalog):
    assert "FindResourceA" in catalog
    entry = catalog.lookup("findresourcea")
    assert entry.name == "FindResourceA"
    assert entry.params == ("hModule", "lpName", "lpType")
    assert entry.arity == 3
    assert catalog.lookup("GetProcessHeap").arity == 0
    assert catalog.lookup("NoSuchApi") is None


def test_catalog_errors():
    with pytest.raises(CatalogError, match="line 1"):
        load_api_catalog("no colon here\n")
    with pytest.raises(CatalogError, match="empty API name"):
        load_api_catalog(":a,b\n")
    with pytest.raises(CatalogError, match="empty parameter"):
        load_api_catalog("Foo:a,,b\n")
    with pytest.raises(CatalogError, match="duplicate"):
        load_api_catalog("Foo:a\nfoo:b\n")


def test_classify_call_targets(catalog):
    def classify(text):
        return classify_call_target(parse_operand(text), catalog)

    assert classify("RegCloseKey").kind == "known-api"
    assert classify("regclosekey").api.name == "RegCloseKey"
    assert classify("sub_403EBC").kind == "external-user-fn"
    assert classify("helper_routine").kind == "external-user-fn"
    assert classify("offset aFunc").kind == "external-user-fn"
    assert classify("loc_401050").kind == "external-user-fn"
    assert classify("dword_40A000").kind == "indirect"
    assert classify("off_44A014").kind == "indirect"
    assert classify("unk_4489B8").kind == "indirect"
    assert classify("eax").kind == "indirect"
    assert classify("[ebx+0Ch]").kind == "indirect"
    assert classify("401000h").kind == "indirect"
    assert classify("42").kind == "indirect"


def test_catalog_membership_beats_prefix_rules():
    catalog = load_api_catalog("dword_fake:x\n")
    target = classify_call_target(parse_operand("dword_fake"), catalog)
    assert target.kind == "known-api"


def test_fixture_files_parse(catalog):
    for name in ("sendto.rdl", "zero_param.rdl", "consecutive_calls.rdl"):
        listing = load_fixture(name)
        assert listing.functions
    assert "FindResourceA" in fixture_text("api_catalog.txt")
