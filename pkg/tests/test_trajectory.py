import numpy as np
import pytest

from daepinn.trajectory import Trajectory


def make_trajectory(**kwargs):
    times = np.array([0.0, 0.1, 0.2])
    Y = np.array([[1.0, 2.0], [1.1, 2.2], [1.3, 2.4]]) / 3.0
    Z = np.array([0.5, 0.6, 0.7]) / 7.0
    return Trajectory(times=times, Y=Y, Z=Z, y_labels=("a", "b"), z_labels=("c",), **kwargs)


class TestTrajectory:
    def test_shapes_and_labels(self):
        traj = make_trajectory()
        assert len(traj) == 3
        assert traj.Z.shape == (3, 1)
        assert traj.labels == ["a", "b", "c"]
        assert traj.states.shape == (3, 3)

    def test_default_labels(self):
        traj = Trajectory(times=[0.0, 1.0], Y=np.zeros((2, 2)), Z=np.zeros(2))
        assert traj.labels == ["y1", "y2", "z1"]

    def test_label_mismatch(self):
        with pytest.raises(ValueError) as e:
            Trajectory(times=[0.0], Y=np.zeros((1, 2)), Z=np.zeros(1), y_labels=("a",))
        assert str(e.value) == "Trajectory labels do not match the state columns"

    def test_time_ordering(self):
        with pytest.raises(ValueError) as e:
            Trajectory(times=[0.0, 0.0], Y=np.zeros(2), Z=np.zeros(2), strict=True)
        assert str(e.value) == "Trajectory times must be strictly increasing"
        Trajectory(times=[0.0, 0.0], Y=np.zeros(2), Z=np.zeros(2))
        with pytest.raises(ValueError) as e:
            Trajectory(times=[1.0, 0.0], Y=np.zeros(2), Z=np.zeros(2))
        assert str(e.value) == "Trajectory times must be non-decreasing"

    def test_truncate(self):
        traj = make_trajectory(dydt=np.ones((3, 2)), meta={"model": "x"})
        short = traj.truncate(2)
        assert len(short) == 2 and short.dydt.shape == (2, 2)
        assert short.meta == {"model": "x"} and short.meta is not traj.meta


class TestTrajectoryCsv:
    def test_round_trip_is_exact(self, tmp_path):
        traj = make_trajectory()
        path = traj.write_csv(tmp_path / "out" / "trajectory.csv")
        assert path.read_text().splitlines()[0] == "t,a,b,c"
        back = Trajectory.read_csv(path, n=2)
        np.testing.assert_array_equal(back.times, traj.times)
        np.testing.assert_array_equal(back.Y, traj.Y)
        np.testing.assert_array_equal(back.Z, traj.Z)
        assert back.labels == traj.labels

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,a\n0,1\n")
        with pytest.raises(ValueError) as e:
            Trajectory.read_csv(path, n=1)
        assert str(e.value).endswith("expected a header starting with `t`")
