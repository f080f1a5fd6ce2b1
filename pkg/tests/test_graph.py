import json

import pydot
import pytest

import oracles
import synth
from alertpipe import graph
from alertpipe.graph import (
    AttackGraph,
    Episode,
    MappingError,
    Node,
    StageMapping,
    attacker_color,
    build_episodes,
    build_graph,
    build_graphs,
    dedupe_window,
    episode_node,
    export_dot,
    graph_index_csv,
    load_ip_map,
    remap_victims,
    victim_filename,
)
from alertpipe.model import Alert, SourceIds, detector, taxonomy_abbreviations


def alert(ts, det, scenario="fox", dst="10.0.0.1", port=None, **attrs):
    return Alert(f"{scenario}:{ts}:{det}", float(ts), SourceIds.SURICATA, detector(det), det, "fw",
                 scenario=scenario, dst_ip=dst, dst_port=port, attributes=attrs)


MAPPING = StageMapping.from_dict({"stages": {"S-Flw-Nmp": "host_discovery", "W-Aut-Sud": "privilege_escalation",
                                             "W-All-Mul3": "service_discovery"}, "drop": ["W-Sys-Cav"]})


class TestDedupe:
    def test_window_boundary(self):
        xs = [alert(t, "S-Flw-Nmp") for t in (0, 1, 1.99, 2, 3, 4.5)]
        assert [a.timestamp for a in dedupe_window(xs, 2.0)] == [0, 2, 4.5]

    def test_keys_are_independent(self):
        xs = [alert(0, "S-Flw-Nmp"), alert(0.5, "S-Flw-Nmp", dst="10.0.0.2"), alert(1, "S-Flw-Nmp", scenario="wilson")]
        assert len(dedupe_window(xs, 2.0)) == 3

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_oracle(self, seed):
        c = synth.random_corpus(seed, max_alerts=400)
        xs = sorted(c.alerts, key=lambda a: a.timestamp)
        for w in (0.5, 2.0, 10.0):
            assert [a.id for a in dedupe_window(xs, w)] == oracles.dedupe(xs, w)


class TestMapping:
    def test_bundled_mapping_is_total(self):
        m = StageMapping.load()
        m.check_total(taxonomy_abbreviations())
        assert m.stage_of(detector("S-Flw-Nmp")) == "host_discovery"
        assert m.stage_of(detector("W-Sys-Cav")) is None

    def test_partial_mapping_rejected(self):
        with pytest.raises(MappingError):
            MAPPING.check_total(["S-Flw-Nmp", "A-Mon-Avg"])

    def test_mapped_and_dropped_rejected(self):
        with pytest.raises(MappingError):
            StageMapping.from_dict({"stages": {"S-Flw-Nmp": "x"}, "drop": ["S-Flw-Nmp"]})


class TestIpMap:
    def test_remap(self, tmp_path):
        p = tmp_path / "ips.json"
        p.write_text(json.dumps({"*": {"10.0.0.1": "intranet"}, "wilson": {"172.16.0.9": "intranet"}}))
        ip_map = load_ip_map(p)
        xs = [alert(0, "S-Flw-Nmp"), alert(1, "S-Flw-Nmp", scenario="wilson", dst="172.16.0.9", host_ip="172.16.0.9"),
              alert(2, "S-Flw-Nmp", dst="10.9.9.9")]
        out = remap_victims(xs, ip_map)
        assert [a.victim for a in out] == ["intranet", "intranet", "10.9.9.9"]
        assert out[1].attributes["host_ip"] == "intranet"

    def test_bad_shape(self, tmp_path):
        p = tmp_path / "ips.json"
        p.write_text(json.dumps({"fox": ["a"]}))
        with pytest.raises(MappingError):
            load_ip_map(p)


class TestEpisodes:
    def test_stage_change_and_gap_split(self):
        xs = [alert(0, "S-Flw-Nmp", port=22), alert(10, "S-Flw-Nmp", port=80), alert(20, "W-Aut-Sud"),
              alert(10_000, "W-Aut-Sud"), alert(10_001, "W-Sys-Cav")]
        eps = build_episodes(xs, MAPPING, gap_seconds=7_200)
        assert [(e.stage, e.alert_count, e.services) for e in eps] == [
            ("host_discovery", 2, frozenset({22, 80})), ("privilege_escalation", 1, frozenset()),
            ("privilege_escalation", 1, frozenset()),
        ]

    @pytest.mark.parametrize("seed", range(15))
    def test_matches_oracle(self, seed):
        c = synth.random_corpus(seed, max_alerts=400)
        m = synth.random_stage_mapping(seed, c.detectors)
        for gap in (1.0, 600.0):
            eps = build_episodes(c.alerts, StageMapping.from_dict(m), gap)
            got = [(e.attacker, e.victim, e.stage, e.start, e.end, e.services, e.alert_count) for e in eps]
            assert got == oracles.episodes(c.alerts, m["stages"], gap)


def ep(att, stage, start, ports=(), victim="v"):
    return Episode(att, victim, stage, float(start), float(start), frozenset(ports), 1)


class TestGraph:
    def test_shared_nodes_and_terminals(self):
        eps = [ep("fox", "scan", 0, [80]), ep("fox", "exploit", 10), ep("fox", "exploit", 20), ep("fox", "escalate", 30),
               ep("wilson", "scan", 0, [80]), ep("wilson", "escalate", 5)]
        g = build_graph(eps, "v")
        assert g.nodes == {Node("scan", (80,)), Node("exploit", ()), Node("escalate", ())}
        assert g.chains["fox"] == (Node("scan", (80,)), Node("exploit", ()), Node("escalate", ()))
        assert g.terminals == {Node("escalate", ())}
        assert len(g.edges) == 3

    def test_min_support_prunes_and_bridges(self):
        eps = [ep("fox", "scan", 0), ep("fox", "odd", 1), ep("fox", "escalate", 2),
               ep("wilson", "scan", 0), ep("wilson", "escalate", 1)]
        g = build_graph(eps, "v", min_support=2)
        assert Node("odd", ()) not in g.nodes
        assert {(e.source.stage, e.target.stage) for e in g.edges} == {("scan", "escalate")}

    def test_other_victims_ignored(self):
        assert build_graph([ep("fox", "scan", 0, victim="w")], "v").nodes == frozenset()

    def test_dot_is_deterministic_and_parses(self):
        eps = [ep("fox", "scan", 0, [22, 80], "10.0.0.1"), ep("fox", 'we"ird\\stage', 5, (), "10.0.0.1"),
               ep("newcomer", "scan", 1, [22, 80], "10.0.0.1")]
        g = build_graph(eps, "10.0.0.1")
        assert len(g.nodes) == 2
        text = export_dot(g)
        assert text == export_dot(build_graph(list(reversed(eps)), "10.0.0.1"))
        (parsed,) = pydot.graph_from_dot_data(text)
        assert len([n for n in parsed.get_nodes() if n.get_name()[1:].isdigit()]) == 2
        assert len(parsed.get_edges()) == 1
        assert "peripheries=2" in text

    def test_colors(self):
        assert attacker_color("fox") == "#800000"
        assert attacker_color("someone") == attacker_color("someone") and attacker_color("someone").startswith("#")

    def test_index_and_filenames(self):
        g = build_graphs([ep("fox", "scan", 0, victim="10.0.0.1"), ep("fox", "x", 1, victim="mail/host")])
        assert victim_filename("mail/host") == "mail_host.dot"
        lines = graph_index_csv(g).splitlines()
        assert lines[0] == "victim,file,nodes,edges,attackers" and lines[1] == "10.0.0.1,10.0.0.1.dot,1,0,1"


def justified(g: AttackGraph, episodes: list[Episode]) -> bool:
    for e in g.edges:
        mine = sorted((x for x in episodes if x.attacker == e.attacker and x.victim == g.victim),
                      key=lambda x: (x.start, x.end, x.stage))
        ok = any(episode_node(a) == e.source and episode_node(b) == e.target and a.start <= b.start
                 for i, a in enumerate(mine) for b in mine[i + 1:])
        if not ok:
            return False
    return True


@pytest.mark.parametrize("seed", range(20))
def test_graph_properties_on_random_corpora(seed, tmp_path):
    c = synth.random_corpus(seed, max_alerts=400)
    m = StageMapping.from_dict(synth.random_stage_mapping(seed, c.detectors))
    xs = dedupe_window(sorted(c.alerts, key=lambda a: a.timestamp), 2.0)
    eps = build_episodes(xs, m, 600.0)
    for victim, g in build_graphs(eps).items():
        assert justified(g, eps)
        assert g.terminals <= g.nodes
        (parsed,) = pydot.graph_from_dot_data(export_dot(g))
        assert len(parsed.get_edges()) == len(g.edges)
