import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tess.costmodel import (
    ArchDescriptor,
    arch_from_network,
    arch_from_specs,
    complexity_table,
    format_complexity,
    format_reports,
    mac_cost,
    mem_cost,
)
from tess.errors import ConfigError
from tess.network import Network, preset_specs


def test_mac_hand_example():
    arch = ArchDescriptor((100, 100, 10), T=6, t_l=0, C=10)
    assert mac_cost(arch, "bptt").total_macs == 66000
    assert mac_cost(arch, "s-tllr").total_macs == 66000
    assert mac_cost(arch, "tess").total_macs == 13200
    assert mac_cost(arch, "tess").per_layer_macs == (12000, 1200)


def test_memory_hand_example():
    arch = ArchDescriptor((10, 10), T=5, C=2)
    assert mem_cost(arch, "bptt").total_scalars == 100
    assert mem_cost(arch, "tess").total_scalars == 40
    assert mem_cost(arch, "tess", alpha_post_nonzero=False).total_scalars == 20
    assert mem_cost(arch, "s-tllr").total_scalars == 40


def test_two_steps_bptt_equals_tess_memory():
    arch = ArchDescriptor((32, 32, 32), T=2, C=4)
    assert mem_cost(arch, "bptt").total_scalars == mem_cost(arch, "tess").total_scalars


def test_empty_window_costs_nothing():
    arch = ArchDescriptor((16, 8, 4), T=5, t_l=5, C=4)
    assert mac_cost(arch, "tess").total_macs == 0
    assert mac_cost(arch, "s-tllr").total_macs == 0
    assert mac_cost(arch, "bptt").total_macs > 0


def test_totals_and_bytes():
    arch = ArchDescriptor((100, 100, 10), T=6, C=10)
    report = mem_cost(arch, "tess", bytes_per_scalar=2)
    assert report.total_scalars == sum(report.per_layer_scalars)
    assert report.total_bytes == 2 * report.total_scalars
    assert report.megabytes == pytest.approx(report.total_bytes / 1e6)
    # exact allocation: q per layer input, h per layer output
    assert report.allocated_scalars == (100 + 100) + (100 + 10)


def test_arch_validation():
    with pytest.raises(ConfigError):
        ArchDescriptor((10,), T=2)
    with pytest.raises(ConfigError):
        ArchDescriptor((10, 0), T=2)
    with pytest.raises(ConfigError):
        ArchDescriptor((10, 4), T=2, t_l=3)
    with pytest.raises(ConfigError):
        mac_cost(ArchDescriptor((10, 4), T=2), "e-prop")


widths = st.lists(st.integers(1, 300), min_size=2, max_size=6)


@given(widths, st.integers(1, 20), st.integers(1, 20), st.integers(1, 5), st.integers(0, 5))
def test_costs_monotone(ns, T, C, dn, dT):
    base = ArchDescriptor(tuple(ns), T=T, C=C)
    grown = [
        ArchDescriptor(tuple(ns), T=T + dT, C=C),
        ArchDescriptor(tuple(ns), T=T, C=C + dn),
        ArchDescriptor(tuple(n + dn for n in ns), T=T, C=C),
        ArchDescriptor((*ns, ns[-1]), T=T, C=C),
    ]
    for rule in ("bptt", "s-tllr", "tess"):
        for bigger in grown:
            assert mac_cost(bigger, rule).total_macs >= mac_cost(base, rule).total_macs
            assert mem_cost(bigger, rule).total_scalars >= mem_cost(base, rule).total_scalars


def test_conv_connections_use_kernel_fan_in():
    arch = arch_from_specs((1, 16, 16), preset_specs("toy-conv", 4), T=6, C=4)
    assert arch.widths == (256, 8 * 256, 16 * 64, 4)
    assert arch.connections == (8 * 256 * 9, 16 * 64 * 8 * 9, 4 * 256)
    assert arch.input_widths == (256, 8 * 256, 256)


def test_arch_from_network_matches_specs():
    net = Network((1, 8, 8), preset_specs("toy-conv", 2), 2, t_l=1)
    arch = arch_from_network(net, T=4)
    assert arch.t_l == 1 and arch.C == 2
    assert mem_cost(arch, "tess").allocated_scalars == net.trace_scalars()


def test_complexity_table_rows():
    rows = {r.method: r for r in complexity_table(ArchDescriptor((64, 64, 64), T=10, C=10))}
    assert len(rows) == 8
    assert (rows["TESS"].memory, rows["TESS"].time) == ("Ln", "LCn")
    assert (rows["ETLP"].memory, rows["ETLP"].time) == ("Ln^2", "LCn")
    assert (rows["BPTT"].memory, rows["BPTT"].time) == ("TLn", "TLn^2")
    assert rows["TESS"].spatial_local and not rows["S-TLLR"].spatial_local
    assert rows["TESS"].time_value == 2 * 10 * 64
    assert rows["BPTT"].time_value == 10 * 2 * 64 * 64
    text = format_complexity(list(rows.values()))
    assert text.splitlines()[0].startswith("method")
    assert "OSTTP" in format_complexity(list(rows.values()), "csv")


def test_report_formats():
    arch = ArchDescriptor((100, 100, 10), T=6, C=10)
    csv_text = format_reports(arch, ["tess"], True, "csv")
    lines = csv_text.strip().splitlines()
    assert lines[0] == "rule,layer,macs,memory_scalars"
    assert "tess,total,13200,420" in lines
    text = format_reports(arch, ["bptt", "tess"], True)
    assert "66000" in text and "13200" in text
    with pytest.raises(ConfigError):
        format_reports(arch, ["tess"], True, "xml")


def test_reconstruction_reproduces_bptt_mac_column_order_of_magnitude():
    arch = arch_from_specs((2, 48, 48), preset_specs("vgg9-paper", 10, input_size=48), T=10, C=10)
    assert mac_cost(arch, "bptt").total_macs / 1e6 == pytest.approx(13589.59, rel=0.01)
    arch32 = arch_from_specs((3, 32, 32), preset_specs("vgg9-paper", 10), T=6, C=10)
    assert mac_cost(arch32, "bptt").total_macs / 1e6 == pytest.approx(3623.90, rel=0.01)
    assert np.isfinite(mem_cost(arch32, "tess").megabytes)
