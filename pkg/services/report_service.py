"""
報告服務模組 - 衰減摘要表的 Markdown 與 HTML 呈現
"""
import math
import os
from typing import Dict, Optional, Sequence, Tuple

import markdown
import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from services.interfaces import ArtifactSinkInterface
from utils.common.logging_utils import get_logger

# 配置日誌
logger = get_logger("report_service")

TEMPLATE_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "templates")
REPORT_TEMPLATE = "decay_report.md.j2"


def _format_number(value) -> str:
    if value is None:
        return "-"
    try:
        number = float(value)
    except (TypeError, ValueError):
        return str(value)
    if math.isnan(number):
        return "-"
    return f"{number:.3f}" if abs(number) >= 1e-3 or number == 0 else f"{number:.2e}"


class ReportService:
    """處理衰減摘要呈現的服務"""

    def __init__(self, template_dir: str = TEMPLATE_DIR):
        """
        初始化報告服務

        Args:
            template_dir: jinja2 模板目錄
        """
        self.markdown = markdown.Markdown(extensions=["extra", "sane_lists", "tables"])
        self.jinja_env = Environment(loader=FileSystemLoader(template_dir), autoescape=False,
                                     undefined=StrictUndefined, trim_blocks=True, lstrip_blocks=True)
        self.jinja_env.filters["num"] = _format_number

    def render_markdown(self, report: pd.DataFrame, title: str, ladder: Optional[pd.DataFrame] = None,
                        notes: Sequence[str] = ()) -> str:
        """
        以模板產生 Markdown 摘要

        Args:
            report: TailService.decay_report 的輸出
            title: 標題
            ladder: 可選的指數階梯表
            notes: 附註

        Returns:
            str: Markdown 文字
        """
        rows = report.to_dict(orient="records")
        unverified = [str(row.get("label") or f"kappa={row['kappa']}") for row in rows
                      if row.get("status") == "unverified"]
        template = self.jinja_env.get_template(REPORT_TEMPLATE)
        return template.render(title=title, rows=rows, unverified=unverified, notes=list(notes),
                               ladder=[] if ladder is None or ladder.empty else ladder.to_dict(orient="records"))

    def render_html(self, markdown_text: str) -> str:
        """將 Markdown 轉換為 HTML"""
        self.markdown.reset()
        return self.markdown.convert(markdown_text)

    def render(self, report: pd.DataFrame, title: str, ladder: Optional[pd.DataFrame] = None,
               notes: Sequence[str] = ()) -> Tuple[str, str]:
        md = self.render_markdown(report, title, ladder, notes)
        return md, self.render_html(md)

    def publish(self, sink: ArtifactSinkInterface, report: pd.DataFrame, title: str,
                ladder: Optional[pd.DataFrame] = None, notes: Sequence[str] = ()) -> Dict[str, str]:
        """
        寫出 decay_summary.csv、Markdown 與 HTML

        Returns:
            Dict[str, str]: {檔名: sha256}
        """
        md, html = self.render(report, title, ladder, notes)
        digests = {
            "decay_summary.csv": sink.write_frame("decay_summary", report, "decay_summary", 1),
            "decay_report.md": sink.write_text("decay_report.md", md),
            "decay_report.html": sink.write_text("decay_report.html", html),
        }
        logger.info(f"Published decay report '{title}' to {sink.location}")
        return digests
