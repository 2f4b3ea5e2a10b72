"""
Tests for the summary workbook
"""

import json

import openpyxl

from config import REPORT_CONFIG
from report_workbook import SummaryWorkbook, inequality_rows, read_checks, write_summary_workbook


def write_manifest(directory, checks):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / 'manifest.json').write_text(json.dumps({'checks': checks, 'passed': all(checks.values())}))


def test_missing_manifest(tmp_path):
    result = write_summary_workbook(tmp_path)
    assert not result['success']
    assert 'No manifest' in result['error']


def test_checks_sheet_is_coloured(tmp_path):
    write_manifest(tmp_path, {'energy_balance': True, 'mass_drift': False})
    result = write_summary_workbook(tmp_path)
    assert result['success'] and not result['passed']

    rows = read_checks(result['file_path'])
    assert rows == [{'check': 'energy_balance', 'status': 'pass'}, {'check': 'mass_drift', 'status': 'fail'}]

    workbook = openpyxl.load_workbook(result['file_path'])
    sheet = workbook['Checks']
    assert sheet['A1'].font.bold
    assert sheet['B3'].fill.start_color.rgb.endswith(REPORT_CONFIG['fail_color'])
    workbook.close()


def test_all_sheets(tmp_path):
    write_manifest(tmp_path, {'weighted_poincare': True})
    (tmp_path / 'diagnostics.csv').write_text("t,kinetic_energy\n0.0,0.25\n0.001,0.24\n")
    report = {'n': 64, 'ratios': [0.5, 0.7], 'skipped': 0, 'violations': [], 'max_ratio': 0.7,
              'stable': True, 'passed': True, 'assertable': True}
    (tmp_path / 'inequalities.json').write_text(json.dumps({'reports': {'weighted_poincare': report}}))
    (tmp_path / 'epsilon.json').write_text(json.dumps({'eps_list': [0.1, 0.01], 'l2h1_differences': [0.3],
                                                       'linf_l2_differences': [0.1]}))
    result = write_summary_workbook(tmp_path, 'custom.xlsx')
    assert result['success'] and result['passed']

    workbook = openpyxl.load_workbook(tmp_path / 'custom.xlsx')
    assert workbook.sheetnames == ['Checks', 'Diagnostics', 'Inequalities', 'Epsilon']
    assert workbook['Diagnostics']['B2'].value == 0.25
    assert workbook['Inequalities']['H2'].value == 'pass'
    assert workbook['Epsilon']['A2'].value == '0.1 / 0.01'
    workbook.close()


def test_unstable_fitted_lemma():
    report = {'n': 64, 'ratios': [0.5], 'skipped': 1, 'violations': [], 'max_ratio': 0.5,
              'stable': False, 'passed': True, 'assertable': False}
    rows = inequality_rows({'reports': {'ladyzhenskaya': report}})
    assert rows[0]['status'] == 'unstable'
    assert rows[0]['skipped'] == 1


def test_add_rows_serializes_lists(tmp_path):
    book = SummaryWorkbook(tmp_path / 'rows.xlsx')
    assert book.add_rows('Rows', ['name', 'values'], [{'name': 'a', 'values': [1, 2]}]) == 1
    path = book.save()
    workbook = openpyxl.load_workbook(path)
    assert workbook['Rows']['B2'].value == '[1, 2]'
    workbook.close()
