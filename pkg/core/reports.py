from io import BytesIO

from openpyxl import Workbook

from .utils import atomic_write_bytes


def export_workbook(path, sheets):
    """Write ``sheets`` ({title: (header, rows)}) as one .xlsx workbook."""
    wb = Workbook()
    wb.remove(wb.active)
    for title, (header, rows) in sheets.items():
        ws = wb.create_sheet(title)
        ws.append(list(header))
        for row in rows:
            ws.append(list(row))
    output = BytesIO()
    wb.save(output)
    return atomic_write_bytes(path, output.getvalue())
