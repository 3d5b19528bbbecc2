from typing import List, Optional
import csv
import io
import logging
import math
from openpyxl import Workbook
from openpyxl.utils import get_column_letter
from app.core.exceptions import InvalidParameterError, ToolkitError
from app.schemas.training import TrainLog
from app.schemas.transforms import ALL_TRANSFORMS

logger = logging.getLogger(__name__)

EXPORT_FORMATS = ("csv", "xlsx")
STEP_HEADERS = ['Step', 'Loss']
EPOCH_HEADERS = ['Epoch', 'Train Loss', 'Val Loss', 'Val Acc'] + [f'Val Loss {k.slug}' for k in ALL_TRANSFORMS]


def _cell(value: Optional[float]):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return None
    return value


def _epoch_rows(log: TrainLog) -> List[list]:
    rows = []
    for e in log.epochs:
        per_transform = e.per_transform or [None] * len(ALL_TRANSFORMS)
        rows.append([e.epoch, e.train_loss, e.val_loss, e.val_acc, *per_transform])
    return rows


def export_train_log_csv(log: TrainLog) -> str:
    """One table: step rows first, then epoch rows, tagged by record type"""
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(['Record', 'Id', 'Loss'] + EPOCH_HEADERS[1:])
    for s in log.steps:
        writer.writerow(['step', s.step, repr(s.loss)] + [''] * (len(EPOCH_HEADERS) - 1))
    for row in _epoch_rows(log):
        writer.writerow(['epoch', row[0], ''] + ['' if _cell(v) is None else repr(v) for v in row[1:]])
    content = output.getvalue()
    output.close()
    return content


def _autosize(ws) -> None:
    for col in ws.columns:
        max_length = max((len(str(cell.value)) for cell in col if cell.value is not None), default=0)
        ws.column_dimensions[get_column_letter(col[0].column)].width = max_length + 2


def export_train_log_xlsx(log: TrainLog) -> bytes:
    """Steps and epochs on separate sheets, columns auto-sized"""
    wb = Workbook()
    steps = wb.active
    steps.title = "Steps"
    steps.append(STEP_HEADERS)
    for s in log.steps:
        steps.append([s.step, s.loss])

    epochs = wb.create_sheet("Epochs")
    epochs.append(EPOCH_HEADERS)
    for row in _epoch_rows(log):
        epochs.append([_cell(v) for v in row])

    for ws in (steps, epochs):
        _autosize(ws)

    output = io.BytesIO()
    wb.save(output)
    content = output.getvalue()
    output.close()
    return content


def export_train_log(log: TrainLog, fmt: str = "csv") -> bytes:
    if fmt not in EXPORT_FORMATS:
        raise InvalidParameterError(f"Export format must be one of {', '.join(EXPORT_FORMATS)}, got '{fmt}'")
    try:
        content = export_train_log_csv(log).encode("utf-8") if fmt == "csv" else export_train_log_xlsx(log)
    except ToolkitError:
        raise
    except Exception as e:
        logger.error(f"Error exporting train log to {fmt}: {e}")
        raise ToolkitError(f"Failed to export train log as {fmt}")
    logger.info(f"Exported {len(log.steps)} steps and {len(log.epochs)} epochs to {fmt.upper()}")
    return content
