import math

from .neural import LossParts
from .schemas import ReportRow


def format_mse(value: float) -> str:
    """Fixed 4-decimal rendering used in every table."""
    return f"{value:.4f}"


def format_table(rows: list[ReportRow]) -> str:
    """Summary table: N_RIS | K | baseline | optimized | sigma | % reduction."""
    head = ("N_RIS", "K", "Baseline MSE", "Optimized MSE", "sigma", "% error reduction")
    body = [
        (
            str(r.n_ris),
            str(r.k),
            format_mse(r.baseline_mse),
            format_mse(r.optimized_mse),
            format_mse(r.sigma),
            f"{r.pct_error_reduction:.2f}",
        )
        for r in sorted(rows, key=lambda r: (r.n_ris, r.k))
    ]
    widths = [max(len(h), *(len(line[i]) for line in body)) if body else len(h) for i, h in enumerate(head)]

    def line(cells) -> str:
        return " | ".join(c.rjust(w) for c, w in zip(cells, widths))

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(head), rule, *(line(b) for b in body)]) + "\n"


def format_loss(parts: LossParts) -> str:
    text = f"total {parts.total:.6g} (coord {parts.coord:.6g}, class {parts.cls:.6g}, reg {parts.reg:.6g})"
    if math.isfinite(parts.accuracy):
        text += f", accuracy {parts.accuracy:.4f}"
    return text


def format_run(key: str, command: str, created_at, duration_s: float) -> str:
    return f"{key[:12]}  {command:<14} {created_at}  {duration_s:8.2f}s"
