"""Session orchestration: the edit cycle (sketch -> lambda -> exaggerate ->
expression -> exact match) and the synthesis pipeline (render -> enhance ->
warp -> seam -> blend -> fill -> relight), with on-disk persistence, stage
caching and rollback on stage errors.
"""

from __future__ import annotations

import json
import uuid
from pathlib import Path

import numpy as np

from .composite import (
    build_alpha,
    ear_edit as _ear_edit_op,
    estimate_lighting,
    fill_interior,
    poisson_blend,
    reshade,
    seam_cut,
    SHLighting,
    to_gray,
)
from .detail import enhance, make_baseline_enhancer, plan_patches
from .errors import StageError
from .field import (
    build_chart_cached,
    estimate_lambda,
    run_external_predictor,
)
from .mesh import (
    FaceMesh,
    LambdaField,
    compute_laplacians,
    deformation_transfer,
    exaggerate,
    load_mesh,
    prefactor,
    region_id,
    save_mesh,
)
from .param import build_flattened_maps, load_chart, save_chart
from .render import RenderOutput, rasterize_screen_attributes, render_textured, warp_background
from .sketch import (
    Camera,
    SketchEdit,
    SketchSet,
    apply_edit,
    correspondence_displacements,
    load_sketch,
    match_sketch,
    project_curves,
    save_sketch,
    snap_radius_for,
    station_error,
)

RENDER_STAGES = ("fg", "enhanced", "bg", "seam", "blend", "filled", "alpha", "result")

_DUMP_STAGES = ("fg", "bg", "seam", "alpha", "blend", "result")


def region_pixel_mask(mesh: FaceMesh, cam: Camera, regions) -> np.ndarray:
    """Pixels whose rendered surface belongs to the named regions."""
    ids = [region_id(r) for r in regions]
    ind = np.isin(mesh.region_labels, ids).astype(np.float64)
    raster, mask = rasterize_screen_attributes(mesh, cam, np.tile(ind[:, None], 3))
    return (raster[..., 0] > 0.5) & mask


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None) -> float:
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[mask]
    mse = float(diff.mean())
    if mse == 0:
        return float("inf")
    return float(10.0 * np.log10(1.0 / mse))


class Session:
    """One editing session persisted as a directory of typed artifacts."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.id = self.dir.name
        self.photo: np.ndarray | None = None
        self.mesh: FaceMesh | None = None
        self.neutral: FaceMesh | None = None
        self.cameras: dict = {}
        self.sketches: dict = {}
        self.lam: LambdaField | None = None
        self.m0c: FaceMesh | None = None
        self.mec: FaceMesh | None = None
        self.mc: FaceMesh | None = None
        self.light: SHLighting | None = None
        self.counters: dict = {}
        self.clean: dict = {}
        self.predictor = None  # optional external lambda predictor
        self._ctx = None
        self._chart = None

    # -- construction / persistence ------------------------------------

    @classmethod
    def create(
        cls,
        directory,
        photo: np.ndarray,
        mesh: FaceMesh,
        neutral: FaceMesh | None = None,
        camera: Camera | None = None,
        side_camera: Camera | None = None,
    ) -> "Session":
        from .synthetic import fit_camera

        s = cls(Path(directory))
        s.dir.mkdir(parents=True, exist_ok=True)
        (s.dir / "stages").mkdir(exist_ok=True)
        s.photo = np.asarray(photo, dtype=np.float64)
        s.mesh = mesh
        s.neutral = neutral if neutral is not None else mesh
        if s.neutral.topology_id != mesh.topology_id:
            raise ValueError("neutral mesh must share topology with the input mesh")
        h, w = s.photo.shape[:2]
        cam = camera or fit_camera(mesh, (w, h), "frontal")
        s.cameras = {
            "frontal": cam,
            "side": side_camera or fit_camera(mesh, (w, h), "side"),
        }
        for view, c in s.cameras.items():
            s.sketches[view] = project_curves(mesh, c)
        s.counters = {}
        s.clean = {}
        s._persist_inputs()
        s._persist_state()
        return s

    @classmethod
    def load(cls, directory) -> "Session":
        s = cls(Path(directory))
        meta = json.loads((s.dir / "session.json").read_text())
        s.photo = np.load(s.dir / "photo.npy")
        s.mesh = load_mesh(s.dir / "mesh.obj")
        neutral_path = s.dir / "neutral.obj"
        s.neutral = load_mesh(neutral_path) if neutral_path.exists() else s.mesh
        s.cameras = {k: Camera.from_dict(v) for k, v in meta["cameras"].items()}
        for view in s.cameras:
            p = s.dir / f"sketch_{view}.json"
            if p.exists():
                s.sketches[view] = load_sketch(p)
        lam_path = s.dir / "lambda.npy"
        if lam_path.exists():
            s.lam = LambdaField(np.load(lam_path), s.mesh.topology_id)
        for attr, name in (("m0c", "m0c"), ("mec", "mec"), ("mc", "mc")):
            p = s.dir / "stages" / f"{name}.obj"
            if p.exists():
                setattr(s, attr, load_mesh(p))
        light_path = s.dir / "light.json"
        if light_path.exists():
            s.light = SHLighting(np.array(json.loads(light_path.read_text())["coeffs"]))
        s.counters = meta.get("counters", {})
        s.clean = meta.get("clean", {})
        return s

    def _persist_inputs(self):
        np.save(self.dir / "photo.npy", self.photo)
        _save_png(self.photo, self.dir / "photo.png")
        save_mesh(self.mesh, self.dir / "mesh.obj")
        if self.neutral is not self.mesh:
            save_mesh(self.neutral, self.dir / "neutral.obj")
        for view, sk in self.sketches.items():
            save_sketch(sk, self.dir / f"sketch_{view}.json")

    def _persist_state(self):
        meta = {
            "id": self.id,
            "cameras": {k: v.to_dict() for k, v in self.cameras.items()},
            "counters": self.counters,
            "clean": self.clean,
        }
        (self.dir / "session.json").write_text(json.dumps(meta, sort_keys=True))

    # -- shared lazies ---------------------------------------------------

    @property
    def ctx(self):
        if self._ctx is None:
            self._ctx = prefactor(self.neutral)
        return self._ctx

    @property
    def chart(self):
        if self._chart is None:
            p = self.dir / "chart.npz"
            if p.exists():
                self._chart = load_chart(p)
            else:
                self._chart = build_chart_cached(self.neutral)
                save_chart(self._chart, p)
        return self._chart

    def current_model(self) -> FaceMesh:
        return self.mc if self.mc is not None else self.mesh

    def sketch_for(self, view: str) -> SketchSet:
        """Displayed sketch: projection of the latest exaggerated model."""
        return project_curves(self.current_model(), self.cameras[view])

    def _bump(self, stage: str):
        self.counters[stage] = self.counters.get(stage, 0) + 1

    def _invalidate_render_stages(self):
        for st in RENDER_STAGES:
            self.clean[st] = False

    # -- edit cycle -------------------------------------------------------

    def edit_cycle(self, edit: SketchEdit, view: str = "frontal") -> dict:
        """Apply one erase-and-redraw edit and re-run the exaggeration chain.

        Any stage failure rolls the session back to its pre-edit state and
        re-raises as StageError naming the stage.
        """
        cam = self.cameras[view]
        snapshot = (
            {v: sk.copy() for v, sk in self.sketches.items()},
            self.lam,
            self.m0c,
            self.mec,
            self.mc,
            dict(self.clean),
        )
        stage = "apply_edit"
        try:
            new_sketch = apply_edit(
                self.sketches[view], edit, snap_radius_for(cam.image_size)
            )
            self._bump(stage)

            stage = "displacements"
            base0 = project_curves(self.mesh, cam)
            disp = correspondence_displacements(base0, new_sketch)
            self._bump(stage)

            stage = "flatten"
            maps = build_flattened_maps(
                self.chart,
                self.neutral,
                compute_laplacians(self.neutral),
                disp,
                cam,
            )
            self._bump(stage)

            stage = "estimate_lambda"
            if self.predictor is not None:
                lam = run_external_predictor(
                    maps, self.predictor, self.chart, self.neutral
                )
            else:
                lam, _ = estimate_lambda(
                    self.neutral, maps, cam, new_sketch, self.ctx, base=base0
                )
            self._bump(stage)

            stage = "exaggerate"
            m0c = exaggerate(self.neutral, lam, self.ctx)
            self._bump(stage)

            stage = "deformation_transfer"
            if np.array_equal(self.mesh.vertices, self.neutral.vertices):
                mec = m0c
            else:
                mec = deformation_transfer(self.neutral, self.mesh, m0c)
            self._bump(stage)

            stage = "match_sketch"
            mc = match_sketch(mec, cam, new_sketch, self.ctx)
            self._bump(stage)
        except Exception as exc:
            (
                self.sketches,
                self.lam,
                self.m0c,
                self.mec,
                self.mc,
                self.clean,
            ) = snapshot
            raise StageError(stage, exc) from exc

        self.sketches[view] = new_sketch
        self.lam, self.m0c, self.mec, self.mc = lam, m0c, mec, mc
        self._invalidate_render_stages()
        np.save(self.dir / "lambda.npy", lam.values)
        save_mesh(m0c, self.dir / "stages" / "m0c.obj")
        save_mesh(mec, self.dir / "stages" / "mec.obj")
        save_mesh(mc, self.dir / "stages" / "mc.obj")
        save_sketch(new_sketch, self.dir / f"sketch_{view}.json")
        self._persist_state()
        return {
            "sketch": project_curves(mc, cam).to_dict(),
            "station_error": station_error(mc, cam, new_sketch),
            "lambda_min": float(lam.values.min()),
            "lambda_max": float(lam.values.max()),
        }

    # -- synthesis ----------------------------------------------------

    def _stage_fresh(self, stage: str, path: Path) -> bool:
        return bool(self.clean.get(stage)) and path.exists()

    def synthesize(self, dump_stages: bool = False, cancel=None) -> Path:
        """Run (or reuse) the full image synthesis chain; returns result path.

        `cancel` may be a threading.Event; it is honored between stages, and
        completed stages stay cached for the next run.
        """
        cam = self.cameras["frontal"]
        model = self.current_model()
        sdir = self.dir / "stages"

        def checkpoint(name):
            if cancel is not None and cancel.is_set():
                raise StageError(name, InterruptedError("synthesis canceled"))

        stage = "fg"
        try:
            checkpoint(stage)
            fg_path = sdir / "fg.npz"
            if self._stage_fresh("fg", fg_path):
                fg = _load_render(fg_path)
            else:
                fg = render_textured(self.mesh, model, cam, self.photo)
                _save_render(fg, fg_path)
                self.clean["fg"] = True
                self._bump("fg")

            stage = "lighting"
            checkpoint(stage)
            if self.light is None:
                light_path = self.dir / "light.json"
                if light_path.exists():
                    self.light = SHLighting(
                        np.array(json.loads(light_path.read_text())["coeffs"])
                    )
                else:
                    render_id = render_textured(self.mesh, self.mesh, cam, self.photo)
                    region = region_pixel_mask(self.mesh, cam, ("nose", "cheek"))
                    self.light = estimate_lighting(
                        to_gray(self.photo), render_id, region
                    )
                    light_path.write_text(
                        json.dumps({"coeffs": self.light.coeffs.tolist()})
                    )
                    self._bump("lighting")

            stage = "enhanced"
            checkpoint(stage)
            enh_path = sdir / "enhanced.npy"
            if self._stage_fresh("enhanced", enh_path):
                enhanced = np.load(enh_path)
            else:
                plan = plan_patches(fg.mask)
                enhanced = enhance(fg.color, plan, make_baseline_enhancer(fg.stretch))
                np.save(enh_path, enhanced)
                self.clean["enhanced"] = True
                self._bump("enhanced")
            fg_enh = RenderOutput(
                enhanced, fg.mask, fg.normals_before, fg.normals_after, fg.stretch, fg.depth
            )

            stage = "bg"
            checkpoint(stage)
            bg_path = sdir / "bg.npy"
            if self._stage_fresh("bg", bg_path):
                bg = np.load(bg_path)
            else:
                bg = warp_background(self.photo, self.mesh, model, cam)
                np.save(bg_path, bg)
                self.clean["bg"] = True
                self._bump("bg")

            stage = "seam"
            checkpoint(stage)
            seam_path = sdir / "seam.npz"
            if self._stage_fresh("seam", seam_path):
                d = np.load(seam_path)
                from .composite import SeamResult

                seam = SeamResult(d["labels"].astype(bool), float(d["cost"]), d["labels"].astype(bool))
            else:
                seam = seam_cut(fg_enh, bg)
                np.savez(seam_path, labels=seam.labels, cost=seam.cost)
                self.clean["seam"] = True
                self._bump("seam")

            stage = "blend"
            checkpoint(stage)
            blend_path = sdir / "blend.npy"
            if self._stage_fresh("blend", blend_path):
                blend = np.load(blend_path)
            else:
                blend = poisson_blend(fg_enh, bg, seam)
                np.save(blend_path, blend)
                self.clean["blend"] = True
                self._bump("blend")

            stage = "filled"
            checkpoint(stage)
            filled_path = sdir / "filled.npy"
            if self._stage_fresh("filled", filled_path):
                filled = np.load(filled_path)
            else:
                interior = region_pixel_mask(model, cam, ("eyes", "mouth"))
                filled = fill_interior(blend, bg, interior)
                np.save(filled_path, filled)
                self.clean["filled"] = True
                self._bump("filled")

            stage = "alpha"
            checkpoint(stage)
            alpha_path = sdir / "alpha.npy"
            if self._stage_fresh("alpha", alpha_path):
                from .composite import AlphaMap

                alpha = AlphaMap(np.load(alpha_path), fg.mask)
            else:
                alpha = build_alpha(self.light, fg_enh, face_region=fg.mask)
                np.save(alpha_path, alpha.values)
                self.clean["alpha"] = True
                self._bump("alpha")

            stage = "result"
            checkpoint(stage)
            result_path = sdir / "result.npy"
            if self._stage_fresh("result", result_path):
                result = np.load(result_path)
            else:
                result = reshade(filled, alpha)
                np.save(result_path, result)
                _save_png(result, self.dir / "result.png")
                self.clean["result"] = True
                self._bump("result")
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc

        if dump_stages:
            dump = self.dir / "stages" / "dump"
            dump.mkdir(exist_ok=True)
            _save_png(fg_enh.color, dump / "fg.png")
            _save_png(bg, dump / "bg.png")
            _save_png(seam.labels.astype(np.float64), dump / "seam.png")
            a = alpha.values
            _save_png((a - a.min()) / max(a.max() - a.min(), 1e-9), dump / "alpha.png")
            _save_png(blend, dump / "blend.png")
            _save_png(result, dump / "result.png")
        self._persist_state()
        return self.dir / "result.png"

    # -- refinement -----------------------------------------------------

    def ear_edit(self, boundary: np.ndarray, redrawn: np.ndarray) -> Path:
        result = self._require_result()
        out = _ear_edit_op(result, boundary, redrawn)
        np.save(self.dir / "stages" / "result.npy", out)
        _save_png(out, self.dir / "result.png")
        self._bump("ear_edit")
        self._persist_state()
        return self.dir / "result.png"

    def mouth_fill(self, template: str = "open") -> Path:
        result = self._require_result()
        cam = self.cameras["frontal"]
        mouth = region_pixel_mask(self.current_model(), cam, ("mouth",))
        if not mouth.any():
            return self.dir / "result.png"
        timg = mouth_template(template, result.shape[:2], mouth)
        out = fill_interior(result, timg, mouth)
        np.save(self.dir / "stages" / "result.npy", out)
        _save_png(out, self.dir / "result.png")
        self._bump("mouth_fill")
        self._persist_state()
        return self.dir / "result.png"

    def _require_result(self) -> np.ndarray:
        p = self.dir / "stages" / "result.npy"
        if not p.exists():
            self.synthesize()
        return np.load(p)


MOUTH_TEMPLATES = ("open", "grin")


def mouth_template(name: str, shape, mouth_mask: np.ndarray) -> np.ndarray:
    """Procedural mouth-interior content sized to the mask bounding box."""
    if name not in MOUTH_TEMPLATES:
        raise ValueError(f"unknown mouth template '{name}'")
    h, w = shape
    out = np.zeros((h, w, 3))
    ys, xs = np.nonzero(mouth_mask)
    if ys.size == 0:
        return out
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    v = (yy - y0) / max(y1 - y0 - 1, 1)
    interior = np.array([0.22, 0.08, 0.08])
    out[y0:y1, x0:x1] = interior * (0.6 + 0.4 * v[..., None])
    if name == "grin":
        teeth = (v > 0.15) & (v < 0.5)
        band = np.zeros_like(out[y0:y1, x0:x1])
        band[teeth] = [0.92, 0.90, 0.85]
        out[y0:y1, x0:x1] = np.where(teeth[..., None], band, out[y0:y1, x0:x1])
    return out


def new_session_id() -> str:
    return uuid.uuid4().hex[:12]


def _save_png(image: np.ndarray, path) -> None:
    from PIL import Image

    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=2)
    # linear -> sRGB for 8-bit storage
    srgb = np.where(
        arr <= 0.0031308, 12.92 * arr, 1.055 * np.power(arr, 1 / 2.4) - 0.055
    )
    Image.fromarray((srgb * 255.0 + 0.5).astype(np.uint8)).save(path)


def load_photo(path) -> np.ndarray:
    """PNG/JPEG -> float64 linear RGB."""
    from PIL import Image

    img = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return np.where(img <= 0.04045, img / 12.92, ((img + 0.055) / 1.055) ** 2.4)


def _save_render(render: RenderOutput, path) -> None:
    np.savez(
        path,
        color=render.color,
        mask=render.mask,
        nb=render.normals_before,
        na=render.normals_after,
        stretch=render.stretch,
        depth=render.depth,
    )


def _load_render(path) -> RenderOutput:
    d = np.load(path)
    return RenderOutput(
        d["color"], d["mask"].astype(bool), d["nb"], d["na"], d["stretch"], d["depth"]
    )
