import pytest

from sparkrl import nao


def test_registry_is_complete_and_ordered():
    specs = nao.registry()
    assert len(specs) == nao.NUM_JOINTS == 22
    assert [s.index for s in specs] == list(range(22))


def test_group_sizes():
    counts = {}
    for spec in nao.registry():
        counts[spec.group] = counts.get(spec.group, 0) + 1
    assert counts["head"] == 2
    assert counts["left_arm"] == counts["right_arm"] == 4
    assert counts["left_leg"] == counts["right_leg"] == 6


def test_names_unique_and_lookups_inverse():
    perceptors = set()
    effectors = set()
    for spec in nao.registry():
        perceptors.add(spec.perceptor_name)
        effectors.add(spec.effector_name)
        assert nao.by_perceptor(spec.perceptor_name) is spec
        assert nao.by_effector(spec.effector_name) is spec
    assert len(perceptors) == len(effectors) == 22


def test_unknown_names_raise():
    with pytest.raises(KeyError):
        nao.by_perceptor("toe1")
    with pytest.raises(KeyError):
        nao.by_effector("laj1")  # perceptor name in the effector namespace


def test_joint_index_bounds():
    assert nao.joint(0).perceptor_name == "hj1"
    assert nao.joint(21).perceptor_name == "rlj6"
    for bad in (-1, 22, 100):
        with pytest.raises(IndexError):
            nao.joint(bad)


def test_limits_sane():
    for spec in nao.registry():
        assert spec.min_angle < spec.max_angle
        assert spec.max_speed == nao.DEFAULT_MAX_SPEED == 350.0


def test_default_controllable_excludes_head():
    ctrl = nao.default_controllable()
    assert len(ctrl) == 20
    assert list(ctrl) == sorted(ctrl)
    head = {nao.by_perceptor("hj1").index, nao.by_perceptor("hj2").index}
    assert not head & set(ctrl)


def test_legs_set():
    names = {nao.joint(i).perceptor_name for i in nao.legs()}
    assert names == {f"{side}lj{k}" for side in "lr" for k in range(1, 7)}


def test_kick_leg_is_right_leg_pitch_chain_plus_roll():
    names = [nao.joint(i).perceptor_name for i in nao.kick_leg()]
    assert names == ["rlj2", "rlj3", "rlj4", "rlj5"]
    assert nao.kick_leg() == (17, 18, 19, 20)


def test_resolve_named_sets():
    assert nao.resolve_joint_set("all") == nao.default_controllable()
    assert nao.resolve_joint_set("legs") == nao.legs()
    assert nao.resolve_joint_set("kick4") == nao.kick_leg()


def test_resolve_csv_names():
    assert nao.resolve_joint_set("rlj3, rlj2") == (17, 18)
    with pytest.raises(ValueError):
        nao.resolve_joint_set("rlj3,nope")


def test_normalize_joint_set():
    assert nao.normalize_joint_set([5, 3]) == (3, 5)
    with pytest.raises(ValueError):
        nao.normalize_joint_set([3, 3])
    with pytest.raises(ValueError):
        nao.normalize_joint_set([22])
