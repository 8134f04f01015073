"""Published per-strategy IoUs used as fixed inputs for the table arithmetic."""
from framescope.core import ClassId

B, D, S, W = ClassId.BEND, ClassId.DENT, ClassId.SCRATCH, ClassId.WINDOW_FRAME

# strategy -> (bend, dent, scratch, window frame)
SUBSET_TABLE = {
    "": (0.808, 0.764, 0.461, 0.746),
    "SR": (0.685, 0.731, 0.428, 0.748),
    "CN": (0.735, 0.765, 0.451, 0.754),
    "IN": (0.896, 0.785, 0.447, 0.756),
    "CE": (0.913, 0.748, 0.497, 0.767),
    "SR+CN": (0.874, 0.740, 0.479, 0.784),
    "CN+IN": (0.858, 0.808, 0.423, 0.742),
    "SR+CE": (0.783, 0.792, 0.467, 0.755),
    "CN+CE": (0.797, 0.757, 0.465, 0.767),
    "IN+CE": (0.884, 0.743, 0.439, 0.754),
    "SR+CN+CE": (0.903, 0.762, 0.488, 0.756),
    "SR+IN+CE": (0.678, 0.761, 0.443, 0.710),
    "SR+CN+IN": (0.715, 0.771, 0.483, 0.759),
    "CN+IN+CE": (0.894, 0.777, 0.417, 0.739),
    "SR+CN+IN+CE": (0.840, 0.789, 0.427, 0.736),
}

ORDER_TABLE = {
    "SR+IN+CE+CN": (0.841, 0.790, 0.479, 0.755),
    "CN+CE+IN+SR": (0.825, 0.716, 0.441, 0.749),
    "IN+CN+SR+CE": (0.811, 0.771, 0.428, 0.765),
    "IN+CE+CN+SR": (0.841, 0.737, 0.472, 0.747),
}

# baseline -> treatment, bend / dent / scratch
BENCHMARK = {B: (0.80, 0.91), D: (0.76, 0.81), S: (0.46, 0.50)}


def report_for(table, mode):
    from framescope.strategy import parse_strategy
    from framescope.sweep import StrategyResult, SweepReport

    rows = [StrategyResult(parse_strategy(name), dict(zip((B, D, S, W), vals))) for name, vals in table.items()]
    return SweepReport(rows, mode)
