import dataclasses

import pytest

from wpsim.config import ConfigError, SimConfig, dump_flat, load_config, parse_flat


def test_defaults_match_machine_description():
    c = SimConfig()
    assert (c.rob_entries, c.issue_entries, c.load_entries, c.store_entries) == (512, 194, 144, 112)
    assert (c.int_phys_regs, c.vec_phys_regs, c.ftq_entries) == (448, 400, 24)
    assert (c.width_decode, c.width_retire) == (12, 12)
    assert (c.l1i.size, c.l1i.ways, c.l1i.latency, c.l1i.mshr_entries) == (32 * 1024, 8, 2, 16)
    assert (c.l1d.size, c.l1d.ways, c.l1d.latency, c.l1d.mshr_entries) == (64 * 1024, 16, 1, 16)
    assert (c.l2.size, c.l2.ways, c.l2.latency, c.l2.mshr_entries) == (1 << 20, 16, 10, 32)
    assert (c.llc.size, c.llc.ways, c.llc.latency, c.llc.mshr_entries) == (2 << 20, 16, 20, 64)
    assert c.memory_latency_cycles == 200


def test_flat_round_trip(tmp_path):
    c = SimConfig(mode="cp", rob_entries=256)
    text = dump_flat(c.to_flat())
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n" + text)
    back = load_config(path)
    assert back == c and back.digest() == c.digest()


def test_section_keys():
    c = SimConfig.from_flat(parse_flat("""
        core.mode = cp
        bpu.ras_depth = 16   # shorter stack
        cache.l2.latency = 12
        cache.memory_latency_cycles = 150
        core.wp_store_address_fill = false
    """))
    assert (c.mode, c.bpu.ras_depth, c.l2.latency, c.memory_latency_cycles) == ("cp", 16, 12, 150)
    assert c.wp_store_address_fill is False


def test_digest_ignores_mode_but_not_geometry():
    a = SimConfig()
    assert a.digest() == a.with_mode("cp").digest()
    assert a.digest(include_mode=True) != a.with_mode("cp").digest(include_mode=True)
    assert a.digest() != dataclasses.replace(a, rob_entries=128).digest()


@pytest.mark.parametrize("text", [
    "core.nonsense = 1",
    "core.rob_entries = abc",
    "core.mode = maybe",
    "cache.l1d.size = 1000",
    "core.rob_entries = 0",
    "no equals sign",
    "core.rob_entries = 1\ncore.rob_entries = 2",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        SimConfig.from_flat(parse_flat(text))


def test_missing_path_gives_defaults():
    assert load_config(None) == SimConfig()
