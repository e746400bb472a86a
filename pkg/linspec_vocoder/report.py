"""PDF output using reportlab: the evaluation report and the spectrogram study sheet."""

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
import random

from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER
from reportlab.lib.pagesizes import letter
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import inch
from reportlab.platypus import (
    SimpleDocTemplate, Paragraph, Spacer, PageBreak, Table, TableStyle, Image, KeepTogether,
)

from . import __version__
from .models import QualityScore, ScoreTable

DARK = colors.HexColor("#1B1B1B")
ACCENT = colors.HexColor("#0077CC")
GRAY = colors.HexColor("#69707D")
HEADER_BG = colors.HexColor("#E6F0FA")

MARGIN = 0.75 * inch


class ReportGenerator:
    """Builds deterministic PDFs (no timestamps, invariant document ids)."""

    def __init__(self):
        self.styles = self._create_styles()

    def _create_styles(self) -> Dict:
        styles = getSampleStyleSheet()
        styles.add(ParagraphStyle(
            name='CoverTitle',
            parent=styles['Title'],
            fontSize=24,
            textColor=DARK,
            spaceAfter=16,
            alignment=TA_CENTER,
        ))
        styles.add(ParagraphStyle(
            name='CoverSubtitle',
            parent=styles['Normal'],
            fontSize=12,
            textColor=GRAY,
            alignment=TA_CENTER,
            spaceAfter=8,
        ))
        styles.add(ParagraphStyle(
            name='SectionHeader',
            parent=styles['Heading2'],
            fontSize=15,
            textColor=ACCENT,
            spaceBefore=14,
            spaceAfter=8,
        ))
        styles.add(ParagraphStyle(
            name='Caption',
            parent=styles['Normal'],
            fontSize=9,
            textColor=GRAY,
            spaceBefore=2,
            spaceAfter=10,
        ))
        return styles

    def _document(self, output_path: Union[str, Path]) -> SimpleDocTemplate:
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        return SimpleDocTemplate(
            str(output_path),
            pagesize=letter,
            rightMargin=MARGIN,
            leftMargin=MARGIN,
            topMargin=MARGIN,
            bottomMargin=MARGIN,
            invariant=True,
            title="linspec-vocoder",
        )

    @staticmethod
    def _grid_style(header_rows: int = 1) -> TableStyle:
        return TableStyle([
            ("BACKGROUND", (0, 0), (-1, header_rows - 1), HEADER_BG),
            ("TEXTCOLOR", (0, 0), (-1, -1), DARK),
            ("FONTNAME", (0, 0), (-1, header_rows - 1), "Helvetica-Bold"),
            ("FONTSIZE", (0, 0), (-1, -1), 8),
            ("GRID", (0, 0), (-1, -1), 0.25, GRAY),
            ("ALIGN", (1, 0), (-1, -1), "CENTER"),
            ("VALIGN", (0, 0), (-1, -1), "MIDDLE"),
        ])

    def _score_table(self, table: ScoreTable) -> Table:
        columns = table.columns
        header = ["method", "seen"] + [f"{regime}\n{kind}" for regime, kind in columns]
        rows = [header]
        for method in table.methods:
            cells = [table.get(method, regime, kind) for regime, kind in columns]
            seen = next((c.seen for c in cells if c is not None), False)
            row = [method, "yes" if seen else "no"]
            for cell in cells:
                row.append("-" if cell is None else f"{cell.mean_score:.3f}\n±{cell.std:.3f} (n={cell.count})")
            rows.append(row)
        grid = Table(rows, repeatRows=1)
        grid.setStyle(self._grid_style())
        return grid

    def _quality_table(self, results: Sequence[QualityScore]) -> Table:
        rows = [["method", "provider", "mean", "95% CI", "count"]]
        for r in results:
            rows.append([r.method, r.provider, f"{r.mean:.3f}", f"±{r.ci95:.3f}", str(r.count)])
        grid = Table(rows, repeatRows=1)
        grid.setStyle(self._grid_style())
        return grid

    def generate_evaluation_report(
        self,
        table: ScoreTable,
        output_path: Union[str, Path],
        figure_path: Optional[Union[str, Path]] = None,
        quality: Optional[Sequence[QualityScore]] = None,
        seed: int = 0,
    ) -> Path:
        """Score table, heatmap and (optionally) external quality scores."""
        doc = self._document(output_path)
        story: List = [
            Spacer(1, 1.5 * inch),
            Paragraph("Spectrogram Realism Evaluation", self.styles['CoverTitle']),
            Paragraph(f"{len(table.methods)} methods, {len(table.columns)} classifiers", self.styles['CoverSubtitle']),
            Paragraph(f"Seed: {seed}", self.styles['CoverSubtitle']),
            PageBreak(),
            Paragraph("Mean classifier scores", self.styles['SectionHeader']),
            Paragraph("Each column is one classifier (negative-sample regime and input kind). "
                      "Scores near 1 mean the method's held-out clips were judged real.",
                      self.styles['Caption']),
            self._score_table(table),
        ]
        if figure_path is not None and Path(figure_path).exists():
            width = doc.width
            story.append(KeepTogether([
                Paragraph("Score heatmap", self.styles['SectionHeader']),
                Image(str(figure_path), width=width, height=width * 0.6, kind="proportional"),
            ]))
        if quality:
            story.append(Paragraph("External quality scores", self.styles['SectionHeader']))
            story.append(self._quality_table(quality))
        doc.build(story, onFirstPage=self._add_footer, onLaterPages=self._add_footer)
        return Path(output_path)

    def generate_study_sheet(self, images: Sequence[Union[str, Path]], output_path: Union[str, Path],
                             seed: int = 0) -> Path:
        """Shuffled, anonymously labelled spectrogram images plus an answer key page."""
        if not images:
            raise ValueError("study sheet needs at least one image")
        order = sorted(str(p) for p in images)
        random.Random(seed).shuffle(order)
        doc = self._document(output_path)
        story: List = [Paragraph("Spectrogram Study Sheet", self.styles['CoverTitle'])]
        for index, path in enumerate(order, start=1):
            story.append(KeepTogether([
                Paragraph(f"Image {index}", self.styles['SectionHeader']),
                Image(path, width=doc.width, height=2.2 * inch),
            ]))
        story.append(PageBreak())
        story.append(Paragraph("Answer key", self.styles['SectionHeader']))
        key = [["image", "file"]] + [[str(i), Path(p).parent.name + "/" + Path(p).name]
                                      for i, p in enumerate(order, start=1)]
        grid = Table(key, repeatRows=1)
        grid.setStyle(self._grid_style())
        story.append(grid)
        doc.build(story, onFirstPage=self._add_footer, onLaterPages=self._add_footer)
        return Path(output_path)

    def _add_footer(self, canvas, doc):
        """Add footer with page number."""
        canvas.saveState()
        canvas.setFont('Helvetica', 8)
        canvas.setFillColor(GRAY)
        canvas.drawRightString(doc.pagesize[0] - MARGIN, 0.5 * inch, f"Page {canvas.getPageNumber()}")
        canvas.drawString(MARGIN, 0.5 * inch, f"linspec-vocoder {__version__}")
        canvas.restoreState()
