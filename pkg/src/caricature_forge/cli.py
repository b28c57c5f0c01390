"""`forge` command line: session management, exaggeration, synthesis,
dataset generation, raster export and the HTTP server."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np


@click.group()
def main():
    """Interactive face-caricature engine."""


@main.command("session")
@click.argument("action", type=click.Choice(["new"]))
@click.option("--out", required=True, type=click.Path())
@click.option("--photo", type=click.Path(exists=True), help="input portrait PNG/JPEG")
@click.option("--mesh", "mesh_path", type=click.Path(exists=True), help="registered OBJ (+ sidecar JSON)")
@click.option("--neutral", type=click.Path(exists=True), help="neutral-expression OBJ")
@click.option("--camera", type=click.Path(exists=True), help="camera JSON")
@click.option("--synthetic", is_flag=True, help="generate a synthetic demo scene")
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=512, show_default=True)
def session_cmd(action, out, photo, mesh_path, neutral, camera, synthetic, seed, size):
    """Create a session directory."""
    from .mesh import load_mesh
    from .pipeline import Session, load_photo
    from .sketch import Camera

    if synthetic:
        from .synthetic import make_scene

        scene = make_scene(image_size=(size, size), seed=seed)
        Session.create(
            out,
            scene["photo"],
            scene["mesh"],
            neutral=scene["neutral"],
            camera=scene["camera"],
        )
    else:
        if not photo or not mesh_path:
            raise click.UsageError("need --photo and --mesh (or --synthetic)")
        cam = None
        if camera:
            cam = Camera.from_dict(json.loads(Path(camera).read_text()))
        Session.create(
            out,
            load_photo(photo),
            load_mesh(mesh_path),
            neutral=load_mesh(neutral) if neutral else None,
            camera=cam,
        )
    click.echo(f"session created at {out}")


@main.command()
@click.option("--mesh", "mesh_path", required=True, type=click.Path(exists=True))
@click.option("--sketch", "sketch_path", required=True, type=click.Path(exists=True), help="edited sketch JSON")
@click.option("--out", required=True, type=click.Path())
@click.option("--camera", type=click.Path(exists=True), help="camera JSON (default: auto-fit frontal)")
@click.option("--lambda-out", type=click.Path(), help="write the estimated field (npy)")
def exaggerate(mesh_path, sketch_path, out, camera, lambda_out):
    """Estimate a lambda field from an edited sketch and exaggerate the mesh."""
    from .field import estimate_lambda
    from .mesh import exaggerate as exaggerate_op, load_mesh, prefactor, save_mesh
    from .sketch import Camera, load_sketch, match_sketch
    from .synthetic import fit_camera

    mesh = load_mesh(mesh_path)
    edited = load_sketch(sketch_path)
    if camera:
        cam = Camera.from_dict(json.loads(Path(camera).read_text()))
    else:
        cam = fit_camera(mesh, view=edited.view)
    ctx = prefactor(mesh)
    lam, info = estimate_lambda(mesh, None, cam, edited, ctx)
    model = exaggerate_op(mesh, lam, ctx)
    model = match_sketch(model, cam, edited, ctx)
    save_mesh(model, Path(out))
    if lambda_out:
        np.save(lambda_out, lam.values)
    click.echo(
        f"exaggerated mesh written to {out} "
        f"(objective {info['objective']:.3g}, {info['iterations']} iterations)"
    )


@main.command()
@click.option("--session", "session_dir", required=True, type=click.Path(exists=True))
@click.option("--dump-stages", is_flag=True, help="write per-stage PNGs")
def synthesize(session_dir, dump_stages):
    """Run the full caricature synthesis for a session."""
    from .pipeline import Session

    s = Session.load(session_dir)
    path = s.synthesize(dump_stages=dump_stages)
    click.echo(f"result written to {path}")


@main.group()
def dataset():
    """Synthetic training-data generators."""


@dataset.command("gen")
@click.option("--out", required=True, type=click.Path())
@click.option("--meshes", default=3, show_default=True, help="number of identities")
@click.option("--styles", default=4, show_default=True, help="exaggerations per identity")
@click.option("--expressions", "n_expr", default=2, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--rings", default=16, show_default=True)
@click.option("--spokes", default=28, show_default=True)
def dataset_gen(out, meshes, styles, n_expr, seed, rings, spokes):
    """Generate the sketch-to-lambda dataset (meshes, maps, sketches)."""
    from .field import generate_dataset
    from .synthetic import make_expression, make_face

    mesh_set = [make_face(rings, spokes, identity_seed=seed + i) for i in range(meshes)]
    kinds = ("open_mouth", "smile", "brow_raise")
    base = make_face(rings, spokes)
    expressions = [
        (base, make_expression(base, kinds[i % len(kinds)])) for i in range(n_expr)
    ]
    manifest = generate_dataset(mesh_set, styles, expressions, out, seed=seed)
    click.echo(f"manifest at {manifest}")


@dataset.command("pairs")
@click.option("--out", required=True, type=click.Path())
@click.option("--photos", default=2, show_default=True)
@click.option("--levels", default=3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--size", default=512, show_default=True)
def dataset_pairs(out, photos, levels, seed, size):
    """Generate blurry/sharp detail-enhancement training pairs."""
    from .detail import make_training_pairs
    from .pipeline import _save_png
    from .synthetic import make_scene

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    pair_id = 0
    for p in range(photos):
        scene = make_scene(image_size=(size, size), seed=seed + p, identity_seed=seed + p)
        pairs = make_training_pairs(
            scene["photo"], scene["mesh"], scene["camera"], levels=levels, seed=seed + p
        )
        for pair in pairs:
            level_dir = out / "pairs" / f"level_{pair['level']}"
            level_dir.mkdir(parents=True, exist_ok=True)
            bp = level_dir / f"img_{pair_id:04d}_b.png"
            sp = level_dir / f"img_{pair_id:04d}_s.png"
            _save_png(pair["blurry"], bp)
            _save_png(pair["sharp"], sp)
            crop_dir = out / "crops" / f"pair_{pair_id:04d}"
            crop_dir.mkdir(parents=True, exist_ok=True)
            size_px = 256
            for ci, (cy, cx) in enumerate(pair["crops"]):
                _save_png(
                    pair["blurry"][cy : cy + size_px, cx : cx + size_px],
                    crop_dir / f"crop_{ci:02d}_b.png",
                )
                _save_png(
                    pair["sharp"][cy : cy + size_px, cx : cx + size_px],
                    crop_dir / f"crop_{ci:02d}_s.png",
                )
            records.append(
                {
                    "id": pair_id,
                    "photo": p,
                    "level": pair["level"],
                    "stretch": round(pair["stretch"], 6),
                    "blurry": str(bp.relative_to(out)),
                    "sharp": str(sp.relative_to(out)),
                    "crops": pair["crops"],
                }
            )
            pair_id += 1
    lines = [json.dumps(r, sort_keys=True) for r in records]
    lines.append(json.dumps({"kind": "summary", "count": pair_id, "complete": True}, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")
    click.echo(f"{pair_id} pairs under {out}")


@main.group()
def raster():
    """Raster-container utilities."""


@raster.command("topng")
@click.option("--container", "container_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--channel", default=None, type=int, help="single channel to export")
@click.option("--normalize", is_flag=True)
def raster_topng(container_path, out, channel, normalize):
    """Export a raster container to an 8-bit PNG (visualization only)."""
    from .param import raster_to_png, read_container

    data, _ = read_container(container_path)
    if channel is not None and data.ndim == 3:
        data = data[..., channel]
    if data.ndim == 3 and data.shape[2] > 3:
        data = data[..., :3]
    raster_to_png(data, out, normalize=normalize)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--root", default="./forge_sessions", show_default=True, help="session storage directory")
def serve(port, host, root):
    """Start the HTTP API consumed by the sketch UI."""
    import uvicorn

    from .server import create_app

    uvicorn.run(create_app(root), host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
