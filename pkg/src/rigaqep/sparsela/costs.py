"""Asymptotic cost model of the quadratic eigensolver's dominant operations."""
from __future__ import annotations

OPERATIONS = ("LU factorization", "FB elimination", "Mat-vec product", "Vec-vec product")


def theoretical_costs(N: float, p: int, nev: int, nit: int, discretization: str = "iga",
                      N_riga: float | None = None) -> list[dict]:
    """Rows of the cost table: call count, per-call order and total order per operation.

    Orders are evaluated with unit constants. ``N`` is the IGA system size;
    ``N_riga`` (defaults to ``N``) enters the products of an rIGA run.
    """
    if discretization not in ("iga", "riga"):
        raise ValueError(f"unknown discretization {discretization!r}")
    if min(N, p) <= 0 or nev < 0 or nit < 0:
        raise ValueError("sizes must be positive")
    riga = discretization == "riga"
    Nm = (N_riga if N_riga is not None else N) if riga else N
    counts = (1, nev * nit, 5 * nev * nit, 2 * nev ** 2 * nit)
    per_call = (
        N ** 1.5 * (p if riga else p ** 3),
        N * (p if riga else p ** 2),
        Nm * p ** 2,
        Nm,
    )
    return [
        {"operation": op, "discretization": discretization, "count": c,
         "cost_per_call": pc, "total": c * pc}
        for op, c, pc in zip(OPERATIONS, counts, per_call)
    ]
