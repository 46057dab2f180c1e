import numpy as np
import pytest

from meshsplat.camera import Camera
from meshsplat.engine import ScriptRunner, Session, load_session, save_session
from meshsplat.errors import (InvalidParameterError, NotFoundError,
                              UnsupportedVersionError)
from meshsplat.geometry import quat_from_axis_angle
from meshsplat.ply import save_ply
from meshsplat.render import render_fast
from meshsplat.script import parse_script

from conftest import cloth_over_blob_scene, random_scene


@pytest.fixture(scope="module")
def cloth_session():
    """One shared session with a built deformable (module-scoped: building
    the mesh and constraints is the expensive part)."""
    sess = Session(cloth_over_blob_scene())
    sess.assign_material(1, "cloth")
    sess.sim_config.update({"dt": 1 / 60, "substeps": 5, "iterations": 8,
                            "damping": 0.995})
    sess.build_deformable(1, iso=0.3, cell=0.08)
    return sess


def _fresh(session: Session) -> Session:
    """Deep-copy a session through its serialized form."""
    import io as _io

    buf = _io.BytesIO()
    session.save(buf)
    buf.seek(0)
    return Session.load(buf)


class TestDeformablePipeline:
    def test_builds_and_binds(self, cloth_session):
        sess = cloth_session
        assert sess.bound_object == 1
        assert sess.rest_mesh.n_faces > 0
        n_cloth = int(np.count_nonzero(sess.scene.object_ids == 1))
        assert len(sess.bindings) == n_cloth
        assert len(sess.bindings.unbound) == 0

    def test_gravity_moves_only_bound_segment(self, cloth_session):
        sess = _fresh(cloth_session)
        sess.pin(0)
        sess.advance_to(0.2)
        view = sess.deformed_scene()
        cloth = sess.scene.object_ids == 1
        assert np.any(np.abs(view.means[cloth] - sess.scene.means[cloth]) > 1e-4)
        np.testing.assert_array_equal(view.means[~cloth], sess.scene.means[~cloth])

    def test_advance_uses_dt_grid(self, cloth_session):
        sess = _fresh(cloth_session)
        steps = sess.advance_to(0.1)
        assert steps == 6  # dt = 1/60
        assert sess.sim_state.time == pytest.approx(0.1, abs=1e-9)

    def test_pin_requires_deformable(self):
        sess = Session(random_scene(10, seed=0))
        with pytest.raises(InvalidParameterError):
            sess.pin(0)

    def test_render_by_camera_name(self, cloth_session):
        sess = _fresh(cloth_session)
        sess.cameras["main"] = Camera.look_at((0, 1, 2), (0, 0.5, 0),
                                              resolution=(64, 48))
        img = sess.render("main")
        assert img.rgb.shape == (48, 64, 3)
        with pytest.raises(NotFoundError):
            sess.render("ghost")


class TestSessionEdits:
    def test_transform_bound_object_cotransforms_sim(self, cloth_session):
        sess = _fresh(cloth_session)
        before_mesh = sess.rest_mesh.vertices.copy()
        before_scene = sess.deformed_scene()
        t = np.array([0.3, 0.0, -0.1])
        sess.transform_object(1, translation=t)
        np.testing.assert_allclose(sess.rest_mesh.vertices, before_mesh + t,
                                   atol=1e-12)
        after_scene = sess.deformed_scene()
        cloth = sess.scene.object_ids == 1
        np.testing.assert_allclose(after_scene.means[cloth],
                                   before_scene.means[cloth] + t, atol=1e-9)

    def test_transform_bound_object_with_scale_keeps_rest_lengths_consistent(
            self, cloth_session):
        from meshsplat.simulation import KIND_DISTANCE, constraint_residuals

        sess = _fresh(cloth_session)
        res_before = constraint_residuals(sess.sim_state, sess.constraints)
        sess.transform_object(1, scale=1.5,
                              rotation=quat_from_axis_angle([0, 1, 0], 0.4))
        res_after = constraint_residuals(sess.sim_state, sess.constraints)
        dist = np.array([c.kind == KIND_DISTANCE for c in sess.constraints.items])
        np.testing.assert_allclose(res_after[dist], res_before[dist], atol=1e-9)

    def test_delete_other_segment_remaps_bindings(self, cloth_session):
        sess = _fresh(cloth_session)
        view_before = sess.deformed_scene()
        cloth_means = view_before.means[sess.scene.object_ids == 1]
        sess.delete_object(0)
        assert sess.bound_object == 1
        view = sess.deformed_scene()
        np.testing.assert_allclose(view.means, cloth_means, atol=1e-12)

    def test_delete_bound_object_dissolves(self, cloth_session):
        sess = _fresh(cloth_session)
        sess.delete_object(1)
        assert sess.bound_object is None
        assert sess.sim_state is None
        assert len(sess.scene) == 30  # only the blob remains


class TestSessionPersistence:
    def test_round_trip_preserves_scene_and_assignments(self, cloth_session,
                                                        tmp_path):
        sess = _fresh(cloth_session)
        sess.cameras["a"] = Camera.look_at((0, 1, 2), (0, 0, 0), resolution=(32, 32))
        path = tmp_path / "s.msession"
        save_session(sess, path)
        again = load_session(path)
        assert again.scene.allclose(sess.scene, tol=0)
        assert again.assignments.records[1].material == "cloth"
        assert "a" in again.cameras
        assert again.sim_config == sess.sim_config

    def test_mid_simulation_resume_is_bitwise(self, cloth_session, tmp_path):
        sess = _fresh(cloth_session)
        sess.pin(0)
        sess.start_drag(0, sess.sim_state.positions[0] + [0.2, 0.1, 0.0], span=1.0)
        sess.advance_to(0.3)
        path = tmp_path / "mid.msession"
        sess.save(path)
        resumed = load_session(path)
        for s in (sess, resumed):
            s.advance_to(1.2)
        np.testing.assert_array_equal(sess.sim_state.positions,
                                      resumed.sim_state.positions)
        np.testing.assert_array_equal(sess.sim_state.velocities,
                                      resumed.sim_state.velocities)
        a = sess.render(Camera.look_at((0, 1, 2), (0, 0.5, 0), resolution=(48, 48)))
        b = resumed.render(Camera.look_at((0, 1, 2), (0, 0.5, 0), resolution=(48, 48)))
        np.testing.assert_array_equal(a.rgb, b.rgb)

    def test_version_mismatch(self, tmp_path):
        import json
        import zipfile

        sess = Session(random_scene(5, seed=1))
        path = tmp_path / "v.msession"
        sess.save(path)
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = zf.read("arrays.npz")
        meta["version"] = 99
        bad = tmp_path / "bad.msession"
        with zipfile.ZipFile(bad, "w") as zf:
            zf.writestr("meta.json", json.dumps(meta))
            zf.writestr("arrays.npz", arrays)
        with pytest.raises(UnsupportedVersionError):
            Session.load(bad)


class TestScriptRunner:
    def _write_scene(self, tmp_path):
        scene = cloth_over_blob_scene()
        ply = tmp_path / "scene.ply"
        save_ply(scene, ply)
        return scene, ply

    def test_zero_step_render_equals_direct(self, tmp_path):
        scene, ply = self._write_scene(tmp_path)
        text = (
            "meshsplat-script v1\n"
            f"scene {ply.name}\n"
            "camera cam eye 0 1 2.5 look 0 0.6 0 fov 55 res 96 72\n"
            "at 0 render cam out.npy\n"
        )
        script = parse_script(text, base_dir=str(tmp_path))
        runner = ScriptRunner(script)
        runner.run()
        produced = np.load(tmp_path / "out.npy")
        cam = Camera.look_at((0, 1, 2.5), (0, 0.6, 0), fov_deg=55,
                             resolution=(96, 72))
        direct = render_fast(load_scene(ply), cam)
        np.testing.assert_allclose(produced, direct.rgb, atol=1e-6)

    def test_script_produces_exactly_requested_files(self, tmp_path):
        scene, ply = self._write_scene(tmp_path)
        text = (
            "meshsplat-script v1\n"
            f"scene {ply.name}\n"
            "camera cam eye 0 1 2.5 look 0 0.6 0 res 64 48\n"
            "at 0 render cam a.png\n"
            "at 0 render cam b.png\n"
        )
        runner = ScriptRunner(parse_script(text, base_dir=str(tmp_path)))
        runner.run()
        assert (tmp_path / "a.png").exists()
        assert (tmp_path / "b.png").exists()
        assert len(runner.rendered) == 2

    def test_sim_script_runs_and_reports_timings(self, tmp_path):
        scene, ply = self._write_scene(tmp_path)
        text = (
            "meshsplat-script v1\n"
            f"scene {ply.name}\n"
            "camera cam eye 0 1 2.5 look 0 0.6 0 res 64 48\n"
            "sim dt 0.02 substeps 4 iterations 6 damping 0.995\n"
            "material 1 cloth\n"
            "bind 1 iso 0.3 cell 0.09\n"
            "at 0 pin 0\n"
            "at 0.5 render cam mid.png\n"
            "step_to 1\n"
        )
        runner = ScriptRunner(parse_script(text, base_dir=str(tmp_path)))
        timings = runner.run()
        assert (tmp_path / "mid.png").exists()
        render_frames = [t for t in timings if t.path]
        assert len(render_frames) == 1
        assert render_frames[0].render_ms > 0.0
        assert runner.session.sim_state.time == pytest.approx(1.0, abs=1e-6)

    def test_script_determinism_byte_identical(self, tmp_path):
        scene, ply = self._write_scene(tmp_path)
        for sub in ("r1", "r2"):
            (tmp_path / sub).mkdir()
        text = (
            "meshsplat-script v1\n"
            f"scene {ply.name}\n"
            "camera cam eye 0 1 2.5 look 0 0.6 0 res 64 48\n"
            "sim dt 0.0166667 substeps 4 iterations 6\n"
            "material 1 cloth\n"
            "bind 1 iso 0.3 cell 0.09\n"
            "at 0 pin 0\n"
            "at 0 move_pin 0 to 0.2 1.1 0 over 0.4\n"
            "at 0.5 render cam {out}/f.png\n"
        )
        for sub in ("r1", "r2"):
            runner = ScriptRunner(parse_script(text.format(out=sub),
                                               base_dir=str(tmp_path)))
            runner.run()
        assert (tmp_path / "r1/f.png").read_bytes() == \
               (tmp_path / "r2/f.png").read_bytes()


def load_scene(path):
    from meshsplat.ply import load_ply

    return load_ply(path)
