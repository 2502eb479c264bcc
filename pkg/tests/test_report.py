import json
import math

from hypothesis import given, strategies as st

from heston_put.report import (
    FAIL,
    INCONCLUSIVE,
    NOT_APPLICABLE,
    PASS,
    ReportEntry,
    VerificationReport,
)


class TestEntry:
    def test_status_from_passed(self):
        assert ReportEntry("p", "a", 0.0, 1.0, True).status == PASS
        assert ReportEntry("p", "a", 2.0, 1.0, False).status == FAIL

    def test_forced_statuses(self):
        assert not ReportEntry("p", "a", 0.0, 1.0, True, status=INCONCLUSIVE).passed
        assert ReportEntry("p", "a", 0.0, 1.0, False, status=NOT_APPLICABLE).passed
        assert ReportEntry("p", "a", 0.0, 1.0, True, status="diagnostic").passed

    def test_non_finite_serialised(self):
        d = ReportEntry("p", "a", math.nan, math.inf, False, {"x": [math.nan]}).to_dict()
        text = json.dumps(d, allow_nan=False)
        assert json.loads(text)["measured"] == "nan"


class TestReport:
    def report(self):
        rep = VerificationReport(config={"seed": 3})
        rep.add(ReportEntry("alpha", "first property", 0.1, 1.0, True))
        rep.add(ReportEntry("beta_long_name", "second property", 2.0, 1.0, False))
        return rep

    def test_passed_and_config(self):
        rep = self.report()
        assert not rep.passed
        assert rep.entries[0].config == {"seed": 3}

    def test_json_stable(self):
        a, b = self.report().to_json(), self.report().to_json()
        assert a == b
        data = json.loads(a)
        assert [e["property"] for e in data["entries"]] == ["alpha", "beta_long_name"]
        assert data["passed"] is False

    def test_text(self):
        lines = self.report().to_text().splitlines()
        assert lines[0].split()[:4] == ["property", "status", "measured", "threshold"]
        assert lines[-1] == "overall: FAIL"
        # columns are aligned
        assert lines[1].index("pass") == lines[2].index("fail")

    def test_empty_report_passes(self):
        assert VerificationReport().to_text().endswith("overall: PASS\n")


@given(st.lists(st.booleans(), max_size=8))
def test_overall_is_conjunction(flags):
    rep = VerificationReport()
    for i, f in enumerate(flags):
        rep.add(ReportEntry(f"p{i}", "a", 0.0, 0.0, f))
    assert rep.passed == all(flags)
