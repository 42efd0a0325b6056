"""Closed entity taxonomy and value canonicalization.

Entity values are stored canonically: case-folded, whitespace-collapsed,
and with currency amounts parsed to integer cents ("$80,000" -> "8000000",
"$28-$32" -> "2800-3200"). Canonicalization is idempotent.
"""

from __future__ import annotations

import re

ENTITY_TYPES = (
    "Location",
    "BusinessType",
    "Demographics",
    "SpendingPattern",
    "ProductType",
    "Pricing",
    "RentalCost",
    "StartupCost",
    "Funding",
    "Permit",
    "License",
    "Layout",
)

# Types whose values are dollar amounts, stored as integer cents.
MONEY_TYPES = frozenset({"Pricing", "RentalCost", "StartupCost", "Funding"})

_WS = re.compile(r"\s+")
_AMOUNT = re.compile(r"\$\s*(\d[\d,]*(?:\.\d{1,2})?)")
_CANONICAL_MONEY = re.compile(r"\d+(?:-\d+)?")


def is_entity_type(name: str) -> bool:
    return name in ENTITY_TYPES


def _to_cents(amount: str) -> int:
    return int(round(float(amount.replace(",", "")) * 100))


def canonicalize(entity_type: str, raw: str) -> str:
    """Return the canonical form of an entity value for `entity_type`."""
    text = _WS.sub(" ", raw.strip()).casefold()
    if entity_type in MONEY_TYPES:
        if _CANONICAL_MONEY.fullmatch(text):
            return text  # already canonical cents
        amounts = [_to_cents(m) for m in _AMOUNT.findall(text)]
        if amounts:
            if len(amounts) == 1:
                return str(amounts[0])
            return f"{amounts[0]}-{amounts[1]}"
    return text


def format_money(canonical: str) -> str:
    """Render canonical cents back to a display string ("8000000" -> "$80,000")."""

    def one(cents: str) -> str:
        value = int(cents)
        dollars, rem = divmod(value, 100)
        if rem:
            return f"${dollars:,}.{rem:02d}"
        return f"${dollars:,}"

    if "-" in canonical:
        lo, hi = canonical.split("-", 1)
        return f"{one(lo)}-{one(hi)}"
    return one(canonical)
