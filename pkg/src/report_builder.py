# src/report_builder.py

from __future__ import annotations

from typing import Any, Dict, List, Optional

from jinja2 import Environment, select_autoescape
from markupsafe import Markup

from .exports import fmt


_ENV = Environment(autoescape=select_autoescape(default_for_string=True, default=True))
_ENV.filters["num"] = lambda x, digits=6: "n/a" if x is None else (
    f"{x:.{digits}g}" if isinstance(x, float) else fmt(x)
)


# -------------------------------------------------------
# HEADER
# -------------------------------------------------------

_HEADER = """
<header style="margin-bottom: 24px;">
  <h1 style="margin:0; font-size:26px;">{{ title }}</h1>
  <p style="margin:2px 0 0 0; color:#666; font-size:13px;">{{ subtitle }}</p>
  <p style="margin:4px 0 0 0; color:#555; font-size:12px;">
    config hash <code>{{ config_hash }}</code> · root seed <code>{{ seed }}</code>
  </p>
</header>
"""


# -------------------------------------------------------
# CONFIG ECHO
# -------------------------------------------------------

_CONFIG = """
<section style="margin-top:20px; padding:10px 12px; border-radius:6px; background:#f5f5f5;">
  <strong style="font-size:13px;">{{ heading }}</strong>
  <table style="margin-top:6px; font-size:12px; color:#333; border-collapse:collapse;">
  {% for key, value in items %}
    <tr>
      <td style="padding:2px 12px 2px 0; color:#777;">{{ key }}</td>
      <td style="padding:2px 0;"><code>{{ value }}</code></td>
    </tr>
  {% endfor %}
  </table>
</section>
"""


# -------------------------------------------------------
# PER-EPSILON TABLE
# -------------------------------------------------------

_RESULTS = """
<section style="margin-top:30px;">
  <h2 style="margin:0 0 12px 0; font-size:20px;">Replicates per epsilon</h2>
  {% if not rows %}
  <p>No epsilon finished.</p>
  {% else %}
  <table style="width:100%; font-size:13px; border-collapse:collapse;">
    <thead>
      <tr style="text-align:right; border-bottom:1px solid #ddd; color:#555;">
        <th style="text-align:left; padding:4px;">epsilon</th>
        <th style="padding:4px;">reps</th>
        <th style="padding:4px;">mean</th>
        <th style="padding:4px;">std error</th>
        <th style="padding:4px;">reference</th>
        <th style="padding:4px;">mse</th>
        <th style="padding:4px;">L<sup>p</sup> error</th>
      </tr>
    </thead>
    <tbody>
    {% for r in rows %}
      <tr style="text-align:right; border-bottom:1px solid #eee;">
        <td style="text-align:left; padding:4px;">{{ r.epsilon | num(3) }}</td>
        <td style="padding:4px;">{{ r.replicate_values | length }}</td>
        <td style="padding:4px;">{{ r.mean | num }}</td>
        <td style="padding:4px;">{{ r.std_error | num(3) }}</td>
        <td style="padding:4px;">{{ r.reference | num }}</td>
        <td style="padding:4px;">{{ r.mse | num(3) }}</td>
        <td style="padding:4px;">{{ r.lp_error | num(3) }}</td>
      </tr>
    {% endfor %}
    </tbody>
  </table>
  {% endif %}
</section>
"""


# -------------------------------------------------------
# RATE FIT
# -------------------------------------------------------

_FIT = """
<section style="margin-top:30px;">
  <h2 style="margin:0 0 12px 0; font-size:20px;">Rate fit · log mse against log epsilon</h2>
  {% if fit is none %}
  <p style="color:#777;">No fit (fewer than three epsilons or no reference value).</p>
  {% elif fit.exact %}
  <p>Zero error at some epsilon: the estimator matches the reference exactly, no rate to fit.</p>
  {% else %}
  <p style="font-size:15px;">
    slope <strong>{{ fit.slope | num(4) }}</strong> ± {{ fit.slope_se | num(2) }}
    · intercept {{ fit.intercept | num(4) }}
  </p>
  {% endif %}
</section>
"""


# -------------------------------------------------------
# HTML GENERATION
# -------------------------------------------------------

_PAGE = """<!DOCTYPE html>
<html lang="en">
<head>
  <meta charset="utf-8" />
  <meta name="viewport" content="width=device-width, initial-scale=1" />
  <meta name="config-hash" content="{{ config_hash }}" />
  <title>{{ title }}</title>
</head>

<body style="font-family:-apple-system,BlinkMacSystemFont,'Segoe UI',Arial,sans-serif;
             background:#fafafa; margin:0; padding:24px; color:#111;">

<div style="max-width:900px; margin:0 auto; background:white;
            padding:24px 32px; border-radius:8px; box-shadow:0 0 12px rgba(0,0,0,0.05);">
{% for block in blocks %}
{{ block }}
{% endfor %}
</div>

</body>
</html>
"""


def _render(source: str, **context: Any) -> str:
    return _ENV.from_string(source).render(**context)


def _page(title: str, config_hash: str, blocks: List[str]) -> str:
    return _render(_PAGE, title=title, config_hash=config_hash, blocks=[Markup(b) for b in blocks])


def build_html_report(study, *, title: Optional[str] = None) -> str:
    """Study report: config echo, per-epsilon table and the fitted slope."""
    cfg = study.config
    title = title or f"Rate study · {cfg.estimator} on {cfg.law}"
    subtitle = f"{len(cfg.epsilons)} epsilons × {cfg.reps} replicates · sigma rule {cfg.sigma_rule}"
    blocks = [
        _render(_HEADER, title=title, subtitle=subtitle, config_hash=cfg.config_hash(), seed=cfg.seed),
        _render(_CONFIG, heading="Study", items=[(k, fmt(v)) for k, v in sorted(cfg.as_dict().items())]),
        _render(_CONFIG, heading="Estimator", items=[(k, fmt(v)) for k, v in sorted(study.estimator_config.items())]),
        _render(_RESULTS, rows=study.results),
        _render(_FIT, fit=study.fit),
    ]
    return _page(title, cfg.config_hash(), blocks)


def build_key_value_report(title: str, report: Dict[str, Any], config_hash: str = "") -> str:
    """Single-table page for oracle and two-point reports."""
    blocks = [
        _render(_HEADER, title=title, subtitle="", config_hash=config_hash or "n/a", seed="n/a"),
        _render(_CONFIG, heading="Result", items=[(k, fmt(v)) for k, v in sorted(report.items())]),
    ]
    return _page(title, config_hash, blocks)
