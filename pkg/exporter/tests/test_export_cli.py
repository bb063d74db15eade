import json
from pathlib import Path

from embed_exporter import cli

FIXTURE = Path(__file__).parent / "fixtures" / "comments_100.jsonl"


def _run(tmp_path, **overrides):
    args = {
        "--subreddit": "coronavirus", "--from": "2020-03-01",
        "--to": "2020-03-10", "--dump": str(FIXTURE),
        "--out": str(tmp_path / "out"),
    }
    args.update(overrides)
    argv = ["export"]
    for k, v in args.items():
        if v is not None:
            argv += [k, v]
    return cli.main(argv)


def test_export_produces_parsable_bundle(tmp_path):
    from epicast.ingest import parse_embeddings, parse_posts

    assert _run(tmp_path) == 0
    out = tmp_path / "out"
    posts = parse_posts(out / "posts.jsonl")
    emb = parse_embeddings(out / "embeddings.jsonl")
    assert len(posts) == 100
    assert emb.dim == 768
    assert all(p.region == "coronavirus" for p in posts)
    # embedding row order matches the posts file line order exactly
    post_ids = [
        json.loads(line)["id"]
        for line in (out / "posts.jsonl").read_text().splitlines()
    ]
    assert list(emb.ids) == post_ids


def test_export_is_deterministic(tmp_path):
    assert _run(tmp_path / "a", **{"--out": str(tmp_path / "a")}) == 0
    assert _run(tmp_path / "b", **{"--out": str(tmp_path / "b")}) == 0
    for name in ("posts.jsonl", "embeddings.jsonl"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_empty_range_writes_empty_files(tmp_path):
    rc = _run(tmp_path, **{"--from": "2021-01-01", "--to": "2021-01-02"})
    assert rc == 0
    out = tmp_path / "out"
    assert (out / "posts.jsonl").read_bytes() == b""
    assert (out / "embeddings.jsonl").read_bytes() == b""


def test_missing_dump_exits_nonzero(tmp_path, capsys):
    rc = _run(tmp_path, **{"--dump": str(tmp_path / "missing.jsonl")})
    assert rc == 1
    assert "error" in capsys.readouterr().err


def test_no_source_exits_nonzero(tmp_path, capsys):
    rc = _run(tmp_path, **{"--dump": None})
    assert rc == 1
    assert "source" in capsys.readouterr().err
