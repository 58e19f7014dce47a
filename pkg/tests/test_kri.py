import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from riskcast import data_path
from riskcast.elicitation import BASELINE
from riskcast.kri import (
    Benchmark,
    Evidence,
    KriError,
    SolveReport,
    Task,
    borda_consensus,
    evidence_for_cutoff,
    map_category_scores,
    map_overall_score,
    map_solves_to_evidence,
    rank_agreement,
    rank_sum,
    triangular_cutoff,
)


@pytest.fixture(scope="module")
def bountybench():
    return Benchmark.load(data_path("bountybench.json"))


@pytest.fixture(scope="module")
def cybench():
    return Benchmark.load(data_path("cybench.json"))


def test_fixture_sizes(bountybench, cybench):
    assert bountybench.n_tasks == 47 and len(bountybench.elicited_subset) == 10
    assert cybench.n_tasks == 42 and len(cybench.elicited_subset) == 10
    assert len(bountybench.alternate_subsets["human"]) == 5
    assert len(cybench.categories["medium"]) == 15


def test_borda_examples():
    assert borda_consensus([["A", "B", "C"], ["A", "B", "C"]]) == ["A", "B", "C"]
    lists = [["A", "B", "C"], ["B", "A", "C"], ["A", "C", "B"]]
    assert borda_consensus(lists) == ["A", "B", "C"]
    assert oracles.borda_points(lists) == {"A": 5, "B": 3, "C": 1}
    assert borda_consensus([["A", "B"], ["B", "A"]]) == ["A", "B"]


def test_borda_rejects_mismatched_sets():
    with pytest.raises(KriError):
        borda_consensus([["A", "B"], ["A", "C"]])


@given(st.permutations(list("ABCDEFG")), st.integers(2, 5))
def test_borda_of_repeated_ranking(order, times):
    assert borda_consensus([list(order)] * times) == list(order)


@given(st.lists(st.permutations(list("ABCDE")), min_size=2, max_size=5), st.randoms())
def test_borda_invariant_to_list_order(lists, rnd):
    shuffled = list(lists)
    rnd.shuffle(shuffled)
    assert borda_consensus(shuffled) == borda_consensus(lists)
    points = oracles.borda_points(lists)
    expected = sorted(points, key=lambda t: (-points[t], t))
    assert borda_consensus(lists) == expected


def test_triangular_examples():
    assert triangular_cutoff(113) == 14
    assert triangular_cutoff(6) == 3
    assert triangular_cutoff(0) == 0
    with pytest.raises(KriError):
        triangular_cutoff(-1)


@given(st.integers(1, 5000))
def test_triangular_boundaries(k):
    t = k * (k + 1) // 2
    assert triangular_cutoff(t) == k
    assert triangular_cutoff(t - 1) == k - 1


@given(st.integers(0, 10**6))
def test_triangular_matches_scan(n):
    assert triangular_cutoff(n) == oracles.scan_cutoff(n)


def test_worked_solve_example(bountybench):
    report = SolveReport.from_ranks(bountybench, [3, 5, 29, 35, 41])
    assert rank_sum(report, bountybench) == 113
    assert map_solves_to_evidence(report, bountybench) == Evidence("bountybench", "paddle", 14)
    human = bountybench.with_subset("human")
    assert map_solves_to_evidence(report, human).level == "librechat"


def test_empty_solves_are_baseline(bountybench):
    assert map_solves_to_evidence(SolveReport("bountybench", frozenset()), bountybench).level == BASELINE


def test_unknown_task_rejected(bountybench):
    with pytest.raises(KriError):
        map_solves_to_evidence(SolveReport("bountybench", frozenset({"nope"})), bountybench)


def _scan_evidence(bench, ranks):
    k = oracles.scan_cutoff(sum(ranks))
    eligible = [bench.rank_of(t) for t in bench.elicited_subset if bench.rank_of(t) <= k]
    return max(eligible) if eligible else 0


def test_random_solves_match_scan(bountybench):
    rnd = random.Random(7)
    for _ in range(300):
        ranks = rnd.sample(range(1, 48), rnd.randint(0, 20))
        ev = map_solves_to_evidence(SolveReport.from_ranks(bountybench, ranks), bountybench)
        assert ev.rank == _scan_evidence(bountybench, ranks)


@given(st.sets(st.integers(1, 47), max_size=25), st.integers(1, 47))
def test_solves_monotone(ranks, extra):
    bench = Benchmark.load(data_path("bountybench.json"))
    before = map_solves_to_evidence(SolveReport.from_ranks(bench, ranks), bench)
    after = map_solves_to_evidence(SolveReport.from_ranks(bench, ranks | {extra}), bench)
    assert after.rank >= before.rank


def test_overall_score_example(cybench):
    ev = map_overall_score(0.55, 37, cybench)
    assert ev.level == "Labyrinth Linguist" and ev.rank == 19
    assert cybench.task_at(20).task_id == "RPGO"
    assert map_overall_score(0.55, 37, cybench.with_subset("human")).level == "Primary Knowledge"


def test_overall_score_edges(cybench):
    assert map_overall_score(0.0, 37, cybench).level == BASELINE
    assert map_overall_score(1.0, 42, cybench).level == "Randsubware"
    with pytest.raises(KriError):
        map_overall_score(0.5, 43, cybench)
    with pytest.raises(KriError):
        map_overall_score(1.2, 10, cybench)


def test_overall_score_floor_is_exact_in_decimal():
    bench = Benchmark("b", tuple(Task(f"t{i}", i) for i in range(1, 101)), ("t56", "t57"))
    # 0.57 * 100 is 56.99999999999999 in binary floating point
    assert map_overall_score(0.57, 100, bench).level == "t57"


def test_category_scores(cybench):
    assert map_category_scores({"easy": 0.99}, cybench).level == "Primary Knowledge"
    assert map_category_scores({"easy": 0.99, "medium": 0.5}, cybench).level == "Labyrinth Linguist"
    # one hard solve reaches rank 29, so the maximum moves past the medium result
    assert map_category_scores({"easy": 0.99, "medium": 0.5, "hard": 0.14}, cybench).level == "Data Siege"
    assert map_category_scores({"medium": (0.5, 15)}, cybench).level == "Labyrinth Linguist"
    with pytest.raises(KriError):
        map_category_scores({"extreme": 0.5}, cybench)


def test_rank_agreement():
    assert rank_agreement(list("ABCD"), list("ABCD")) == pytest.approx(1.0)
    assert rank_agreement(list("ABCD"), list("DCBA")) == pytest.approx(-1.0)
    a, b = list("ABCDE"), list("BADCE")
    pos = {t: i for i, t in enumerate(b)}
    assert rank_agreement(a, b) == pytest.approx(oracles.spearman(list(range(5)), [pos[t] for t in a]), abs=1e-12)
    with pytest.raises(KriError):
        rank_agreement(list("AB"), list("AC"))


def test_invalid_benchmarks():
    with pytest.raises(KriError):
        Benchmark("b", (Task("x", 1), Task("y", 3)), ())
    with pytest.raises(KriError):
        Benchmark("b", (Task("x", 1), Task("y", 2)), ("y", "x"))
    with pytest.raises(KriError):
        Benchmark("b", (Task("x", 1), Task("y", 2)), ("z",))


def test_evidence_for_cutoff(bountybench):
    assert evidence_for_cutoff(bountybench, 0).is_baseline
    assert evidence_for_cutoff(bountybench, 47).level == "pytorch"
    assert evidence_for_cutoff(bountybench, 13).level == "librechat"
