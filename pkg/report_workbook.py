"""
Summary workbook for a harness output directory
"""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import openpyxl
from openpyxl.styles import Alignment, Font, PatternFill
from openpyxl.utils import get_column_letter

from config import OUTPUT_CONFIG, REPORT_CONFIG

logger = logging.getLogger(__name__)

CHECK_COLUMNS = ['check', 'status']
INEQUALITY_COLUMNS = ['lemma', 'n', 'samples', 'skipped', 'violations', 'max_ratio', 'stable', 'status']
EPSILON_COLUMNS = ['eps_pair', 'l2h1_difference', 'linf_l2_difference']


class SummaryWorkbook:
    """Writes check, diagnostics, inequality and epsilon sheets to one .xlsx file"""

    def __init__(self, file_path: Union[str, Path]):
        self.file_path = Path(file_path)
        self.workbook = openpyxl.Workbook()
        self.workbook.remove(self.workbook.active)
        self.status_colors = {
            'pass': REPORT_CONFIG['pass_color'],
            'fail': REPORT_CONFIG['fail_color'],
            'unstable': REPORT_CONFIG['warn_color'],
        }

    def _create_sheet(self, title: str, columns: Sequence[str], widths: Optional[Dict[str, int]] = None):
        worksheet = self.workbook.create_sheet(title)
        color = REPORT_CONFIG['header_color']
        for col, header in enumerate(columns, 1):
            cell = worksheet.cell(row=1, column=col, value=header)
            cell.fill = PatternFill(start_color=color, end_color=color, fill_type="solid")
            cell.font = Font(color="FFFFFF", bold=True)
            cell.alignment = Alignment(horizontal="center")
            width = (widths or {}).get(header, max(12, len(header) + 2))
            worksheet.column_dimensions[get_column_letter(col)].width = width
        return worksheet

    def _format_status_cell(self, cell, status_value: str):
        if status_value in self.status_colors:
            color = self.status_colors[status_value]
            cell.fill = PatternFill(start_color=color, end_color=color, fill_type="solid")
            cell.font = Font(bold=True, color="FFFFFF")

    def add_rows(self, title: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]],
                 widths: Optional[Dict[str, int]] = None) -> int:
        """Append a sheet with one row per dict; status cells are coloured"""
        worksheet = self._create_sheet(title, columns, widths)
        for row_index, row in enumerate(rows, 2):
            for col, header in enumerate(columns, 1):
                value = row.get(header, '')
                if isinstance(value, (list, dict)):
                    value = json.dumps(value)
                cell = worksheet.cell(row=row_index, column=col, value=value)
                if header == 'status':
                    self._format_status_cell(cell, value)
        return len(rows)

    def save(self) -> Path:
        self.workbook.save(self.file_path)
        self.workbook.close()
        logger.info(f"Summary workbook written to {self.file_path}")
        return self.file_path


def _read_json(path: Path) -> Optional[Dict[str, Any]]:
    return json.loads(path.read_text()) if path.exists() else None


def _read_csv(path: Path) -> List[Dict[str, Any]]:
    if not path.exists() or not path.read_text().strip():
        return []
    with open(path, newline='') as handle:
        return [{k: _number(v) for k, v in row.items()} for row in csv.DictReader(handle)]


def _number(text: str) -> Any:
    try:
        return float(text)
    except (TypeError, ValueError):
        return text


def inequality_rows(summary: Dict[str, Any]) -> List[Dict[str, Any]]:
    rows = []
    for lemma, report in summary.get('reports', {}).items():
        if not report['passed']:
            status = 'fail'
        elif report.get('stable') is False and not report['assertable']:
            status = 'unstable'
        else:
            status = 'pass'
        rows.append({
            'lemma': lemma,
            'n': report['n'],
            'samples': len(report['ratios']),
            'skipped': report['skipped'],
            'violations': len(report['violations']),
            'max_ratio': report['max_ratio'],
            'stable': report.get('stable'),
            'status': status,
        })
    return rows


def write_summary_workbook(directory: Union[str, Path], file_name: Optional[str] = None) -> Dict[str, Any]:
    """
    Collect the manifest, diagnostics and reports of a run directory into summary.xlsx

    Returns:
        Result of the operation; passed mirrors the manifest
    """
    directory = Path(directory)
    try:
        manifest = _read_json(directory / OUTPUT_CONFIG['manifest_json'])
        if manifest is None:
            return {
                'success': False,
                'error': f'No manifest in {directory}',
                'message': 'Not a harness output directory'
            }

        book = SummaryWorkbook(directory / (file_name or REPORT_CONFIG['file_name']))
        checks = [{'check': name, 'status': 'pass' if ok else 'fail'} for name, ok in manifest['checks'].items()]
        book.add_rows('Checks', CHECK_COLUMNS, checks, {'check': 30})

        records = _read_csv(directory / OUTPUT_CONFIG['diagnostics_csv'])
        if records:
            book.add_rows('Diagnostics', list(records[0].keys()), records)

        inequalities = _read_json(directory / 'inequalities.json')
        if inequalities:
            book.add_rows('Inequalities', INEQUALITY_COLUMNS, inequality_rows(inequalities), {'lemma': 22})

        epsilon = _read_json(directory / 'epsilon.json')
        if epsilon:
            eps = epsilon['eps_list']
            rows = [{'eps_pair': f"{a:g} / {b:g}", 'l2h1_difference': d, 'linf_l2_difference': e}
                    for a, b, d, e in zip(eps, eps[1:], epsilon['l2h1_differences'], epsilon['linf_l2_differences'])]
            book.add_rows('Epsilon', EPSILON_COLUMNS, rows)

        path = book.save()
        return {
            'success': True,
            'passed': bool(manifest.get('passed')),
            'file_path': str(path),
            'message': 'Summary workbook written'
        }

    except Exception as e:
        logger.error(f"Error writing summary workbook: {e}")
        return {
            'success': False,
            'error': str(e),
            'message': 'Failed to write summary workbook'
        }


def read_checks(file_path: Union[str, Path]) -> List[Dict[str, Any]]:
    """Rows of the Checks sheet of a summary workbook"""
    workbook = openpyxl.load_workbook(file_path)
    worksheet = workbook['Checks']
    rows = []
    for row in range(2, worksheet.max_row + 1):
        rows.append({header: worksheet.cell(row=row, column=col).value
                     for col, header in enumerate(CHECK_COLUMNS, 1)})
    workbook.close()
    return rows
