"""Month-level sample filters: recessions, event calendars and sentiment regimes."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ..data_ingest import CalendarLabel, EventCalendar, MonthlyPredictorSeries, shift_month
from ..errors import DomainError


class FilterMode(str, Enum):
    FULL = "FULL"
    EXCLUDE_NBER = "EXCLUDE_NBER"
    CALENDAR_ONLY = "CALENDAR_ONLY"
    REGIME = "REGIME"


class RegimeRule(str, Enum):
    ABOVE_MEDIAN = "ABOVE_MEDIAN"
    BELOW_MEDIAN = "BELOW_MEDIAN"


@dataclass(frozen=True)
class SampleFilter:
    mode: FilterMode = FilterMode.FULL
    calendar: Optional[EventCalendar] = None
    regime_rule: Optional[RegimeRule] = None
    conditioning: Optional[MonthlyPredictorSeries] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.mode in (FilterMode.EXCLUDE_NBER, FilterMode.CALENDAR_ONLY) and self.calendar is None:
            raise DomainError(f"{self.mode.value} filter needs a calendar")
        if self.mode is FilterMode.REGIME and (self.regime_rule is None or self.conditioning is None):
            raise DomainError("REGIME filter needs a rule and a conditioning series")

    def admits(self, months: Sequence[str]) -> np.ndarray:
        months = list(months)
        if self.mode is FilterMode.FULL:
            return np.ones(len(months), dtype=bool)
        if self.mode is FilterMode.EXCLUDE_NBER:
            return np.array([m not in self.calendar for m in months], dtype=bool)
        if self.mode is FilterMode.CALENDAR_ONLY:
            return np.array([m in self.calendar for m in months], dtype=bool)
        # median over the whole conditioning series; ties go to the high state
        med = float(np.median(self.conditioning.values))
        lookup = dict(zip(self.conditioning.months, self.conditioning.values.tolist()))
        high = np.array([m in lookup and lookup[m] >= med for m in months], dtype=bool)
        known = np.array([m in lookup for m in months], dtype=bool)
        return high if self.regime_rule is RegimeRule.ABOVE_MEDIAN else known & ~high

    def describe(self) -> str:
        if self.label:
            return self.label
        if self.mode is FilterMode.FULL:
            return "FULL"
        if self.mode is FilterMode.EXCLUDE_NBER:
            return "EXCLUDE_NBER"
        if self.mode is FilterMode.CALENDAR_ONLY:
            return f"ONLY_{self.calendar.label.value}"
        state = "HIGH" if self.regime_rule is RegimeRule.ABOVE_MEDIAN else "LOW"
        return f"{self.conditioning.name.upper()}_{state}"

    def __and__(self, other) -> "CompositeFilter":
        return CompositeFilter((self, other))


@dataclass(frozen=True)
class CompositeFilter:
    """Intersection of several filters."""

    parts: tuple

    def admits(self, months: Sequence[str]) -> np.ndarray:
        mask = np.ones(len(months), dtype=bool)
        for f in self.parts:
            mask &= f.admits(months)
        return mask

    def describe(self) -> str:
        return "&".join(f.describe() for f in self.parts)

    def __and__(self, other) -> "CompositeFilter":
        return CompositeFilter(self.parts + (other,))


FULL = SampleFilter()


def exclude_nber(calendar: EventCalendar) -> SampleFilter:
    return SampleFilter(FilterMode.EXCLUDE_NBER, calendar=calendar)


def regime(conditioning: MonthlyPredictorSeries, rule: RegimeRule | str) -> SampleFilter:
    return SampleFilter(FilterMode.REGIME, regime_rule=RegimeRule(rule), conditioning=conditioning)


def partition_fomc(months: Sequence[str], fomc: EventCalendar) -> dict[str, SampleFilter]:
    """Split a sample into FOMC, PRE, POST and NONE months.

    Priority is FOMC > PRE > POST > NONE, so the four sets are disjoint and
    cover ``months``.
    """
    fomc_set = set(fomc.months)
    sample = list(months)
    pre = {m for m in sample if m not in fomc_set and shift_month(m, 1) in fomc_set}
    post = {m for m in sample if m not in fomc_set and m not in pre and shift_month(m, -1) in fomc_set}
    in_fomc = {m for m in sample if m in fomc_set}
    none = set(sample) - in_fomc - pre - post
    out = {}
    for name, ms in (("FOMC", in_fomc), ("PRE", pre), ("POST", post), ("NONE", none)):
        cal = EventCalendar(CalendarLabel.FOMC_MEETING, frozenset(ms))
        out[name] = SampleFilter(FilterMode.CALENDAR_ONLY, calendar=cal, label=f"FOMC_{name}")
    return out
