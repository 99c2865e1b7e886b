import json

import numpy as np
import pytest

from skintone_audit.cli import main
from skintone_audit.imaging import RasterImage, detect_skin, rgb_to_ycrcb, skin_luminance_histogram
from skintone_audit.manifest import load_manifest
from skintone_audit.model.remote import ENDPOINT_ENV
from skintone_audit.skin_transform import default_palette_dir, luminance_mode


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_detect_skin_outputs(dataset, tmp_path, capsys):
    image = load_manifest(dataset)[0].path
    assert main(["detect-skin", str(image), "--out", str(tmp_path)]) == 0
    assert {p.name for p in tmp_path.iterdir()} == {"mask.png", "y_hist.txt", "cr_hist.txt", "cb_hist.txt"}
    mask = RasterImage.open(tmp_path / "mask.png").pixels[..., 0] > 0
    assert np.array_equal(mask, detect_skin(rgb_to_ycrcb(RasterImage.open(image))).bits)
    y_total = sum(int(line.split()[1]) for line in (tmp_path / "y_hist.txt").read_text().splitlines())
    assert y_total == mask.sum()
    assert "skin pixels" in capsys.readouterr().out


def test_transform_mode_shift_hits_target(dataset, tmp_path):
    image = load_manifest(dataset)[1].path
    out = tmp_path / "lighter.png"
    assert main(["transform", str(image), "--method", "mode-shift", "--target-mode", "140", "--out", str(out)]) == 0
    img = rgb_to_ycrcb(RasterImage.open(out))
    assert luminance_mode(skin_luminance_histogram(img, detect_skin(img))) == 140
    meta = json.loads((tmp_path / "lighter.png.json").read_text())
    assert meta["target_mode"] == 140 and meta["delta"] == 140 - meta["old_mode"]


def test_transform_ot_with_palette(dataset, tmp_path):
    image = load_manifest(dataset)[0].path
    palette = default_palette_dir() / "tone08.txt"
    out = tmp_path / "ot.png"
    assert main(["transform", str(image), "--method", "ot", "--palette", str(palette), "--out", str(out)]) == 0
    before = rgb_to_ycrcb(RasterImage.open(image))
    after = rgb_to_ycrcb(RasterImage.open(out))
    mask = detect_skin(before)
    assert after.y[mask.bits].mean() > before.y[mask.bits].mean()


def test_usage_errors(dataset, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(ENDPOINT_ENV, raising=False)
    with pytest.raises(SystemExit) as exc:
        main(["audit-stability", "--manifest", str(dataset), "--direction", "lighten",
              "--method", "ot", "--out", str(tmp_path)])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["audit-stability", "--manifest", str(dataset), "--model", "m", "--direction", "sideways",
              "--method", "ot", "--out", str(tmp_path)])
    assert exc.value.code == 2
    capsys.readouterr()
    assert main(["accuracy-table", "--manifest", str(tmp_path / "nope.csv"), "--model", "m"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ") and err.count("\n") == 1


def test_accuracy_table_from_scores(tmp_path, capsys):
    for i in range(8):
        (tmp_path / f"{i}.png").write_bytes(b"")
    genders = ["female", "male"] * 4
    skins = ["dark", "dark", "light", "light"] * 2
    manifest = ["path,gender,skin_type,hair_length"]
    manifest += [f"{i}.png,{g},{s},{'long' if g == 'female' else 'short'}" for i, (g, s) in enumerate(zip(genders, skins))]
    (tmp_path / "m.csv").write_text("\n".join(manifest) + "\n")
    # by hand: dark-female rows 0,4 -> 0.2 ok, 0.9 wrong; dark-male 1,5 -> 0.8 ok, 0.6 ok;
    # light-female 2,6 -> 0.5 ok (0.5 is female), 0.1 ok; light-male 3,7 -> 0.3 wrong, 0.4 wrong
    scores = [0.2, 0.8, 0.5, 0.3, 0.9, 0.6, 0.1, 0.4]
    (tmp_path / "s.csv").write_text("path,score\n" + "".join(f"{i}.png,{s}\n" for i, s in enumerate(scores)))
    assert main(["accuracy-table", "--manifest", str(tmp_path / "m.csv"), "--scores", str(tmp_path / "s.csv"),
                 "--out", str(tmp_path / "t.csv")]) == 0
    assert (tmp_path / "t.csv").read_text().splitlines() == [
        "skin_type,gender,n,correct,accuracy",
        "dark,female,2,1,0.5",
        "dark,male,2,2,1",
        "light,female,2,2,1",
        "light,male,2,0,0",
    ]


def test_accuracy_table_with_model(dataset, trained_model, capsys):
    assert main(["accuracy-table", "--manifest", str(dataset), "--model", str(trained_model), "--group-by", "gender"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "gender,n,correct,accuracy"
    assert sum(int(line.split(",")[1]) for line in lines[1:]) == 40


def test_audit_stability_ot_and_rerun_identical(dataset, trained_model, tmp_path, capsys):
    args = ["audit-stability", "--manifest", str(dataset), "--model", str(trained_model),
            "--direction", "lighten", "--method", "ot", "--palettes", str(default_palette_dir()),
            "--skin-type", "dark"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    fields = dict(line.split(": ") for line in (tmp_path / "a" / "report.txt").read_text().splitlines())
    assert fields["group"] == "dark" and fields["method"] == "ot" and int(fields["n"]) == 20
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_train_model_deterministic(dataset, tmp_path, capsys):
    args = ["train-model", "--manifest", str(dataset), "--side", "16", "--epochs", "3", "--seed", "4"]
    assert main(args + ["--out", str(tmp_path / "a.skt")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.skt")]) == 0
    assert (tmp_path / "a.skt").read_bytes() == (tmp_path / "b.skt").read_bytes()
    assert "train accuracy" in capsys.readouterr().out


def test_explain_writes_masks(dataset, trained_model, tmp_path, capsys):
    out = tmp_path / "cem"
    assert main(["explain", "--manifest", str(dataset), "--model", str(trained_model), "--limit", "4",
                 "--c-grid", "1,10", "--max-iters", "150", "--out", str(out)]) == 0
    rows = [line for line in (out / "explain.csv").read_text().splitlines()[1:] if not line.startswith("#")]
    assert rows
    for line in rows:
        stem = line.split(",")[0].replace("/", "_").rsplit(".", 1)[0]
        delta = np.load(out / "masks" / f"{stem}.npy")
        assert delta.shape == (3, 32, 32) and delta.min() >= 0


def test_synth_command(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "s"), "--n", "4", "--seed", "2"]) == 0
    rows = load_manifest(tmp_path / "s" / "manifest.csv")
    assert len(rows) == 4 and {r.group for r in rows} == {"dark-female", "dark-male", "light-female", "light-male"}
