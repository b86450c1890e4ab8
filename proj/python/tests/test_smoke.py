import json

import pytest

import cgforge


def test_tokenize_and_symbolize():
    assert cgforge.tokenize("mov rax, [rdi]") == ["mov", "rax", ",", "[", "rdi", "]"]
    assert cgforge.symbolize(["call", "sub_401000"]) == ["call", "fun0"]
    assert cgforge.symbolize(["call", "sub_401000"], policy="strict") == ["call", "fun"]
    with pytest.raises(cgforge.Error):
        cgforge.symbolize(["ret"], policy="fuzzy")


def _fixture():
    rows = [
        {"bin": "b", "func_start": "0x10", "func_end": "0x20", "name": "sub_10"},
        {"bin": "b", "func": "0x10", "func_end": "0x20", "addr": "0x10", "text": "mov rdi, rbx", "xref_data": []},
        {"bin": "b", "func": "0x10", "func_end": "0x20", "addr": "0x13", "text": "mov r10, r11", "xref_data": []},
        {"bin": "b", "func": "0x10", "func_end": "0x20", "addr": "0x16", "text": "call rax", "xref_data": []},
        {"bin": "b", "func": "0x10", "func_end": "0x20", "addr": "0x18", "text": "mov rcx, rax", "xref_data": []},
    ]
    return "\n".join(json.dumps(r) for r in rows) + "\n"


def test_slicing():
    p = cgforge.Program.from_jsonl(_fixture())
    assert p.functions == [0x10]
    assert p.indirect_callsites() == [0x16]
    s = p.slice_callsite(0x16)
    assert s["kept_addrs"] == [0x10, 0x16, 0x18]
    assert s["tokens"][:2] == ["mov", "rdi"]
    with pytest.raises(cgforge.DataError):
        p.slice_callsite(0x900)
    with pytest.raises(cgforge.ParseError):
        cgforge.Program.from_jsonl("not json\n")


def test_loss_and_metrics():
    assert cgforge.contrastive_loss([0.2, 0.3], [1, 0]) == pytest.approx(0.1325, abs=1e-12)
    d = [0.1] * 9 + [0.2, 0.9] + [0.8] * 9
    y = [1] * 9 + [0, 1] + [0] * 9
    r = cgforge.evaluate(d, y)
    assert r["f1"] == pytest.approx(0.9)
    assert len(r["pr_curve"]) == 101
    r = cgforge.evaluate([0.1, 0.1, 0.1, 0.2, 0.2, 0.2, 0.2, 0.2], [1] * 8, callsites=[1, 1, 1, 2, 2, 2, 2, 2])
    assert r["aict"] == pytest.approx(4.0)


def test_train_save_load_score(tmp_path):
    corpus, truth = cgforge.generate_corpus(binaries=4, seed=3)
    programs = cgforge.parse_programs(corpus)
    assert len(programs) == 4
    cfg = json.loads(cgforge.desk_config())
    cfg["train"]["epochs"] = 2
    learner = cgforge.Learner.pretrain(programs, json.dumps(cfg))
    learner.save(tmp_path / "model")
    back = cgforge.Learner.load(tmp_path / "model")
    assert back.vocab_hash() == learner.vocab_hash()

    first = json.loads(truth.splitlines()[0])
    prog = next(p for p in programs if p.binary_id == first["bin"])
    pairs = [(int(first["cs_addr"], 16), c) for c in prog.address_taken()]
    a = learner.score(prog, pairs)
    b = back.score(prog, pairs)
    assert a == b
    assert all(0.0 < x < 1.0 for x in a)
