# CSV / JSON artifacts of the experiment commands.
# Every CSV starts with a provenance comment and a header row; the run timestamp only
# goes to the JSON sidecar so CSV bodies are identical across re-runs.

import csv
import os
import os.path as osp
from datetime import datetime, timezone
from typing import Iterable, List, Sequence
import numpy as np
from loguru import logger
import utils


def _cell(value):
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if value is None:
        return ''
    return value


class ArtifactWriter:
    def __init__(self, out_dir: str, config_hash: str, seed: int) -> None:
        self.out_dir = out_dir
        self.config_hash = config_hash
        self.seed = int(seed)
        self.written: List[str] = []
        os.makedirs(out_dir, exist_ok=True)

    @property
    def provenance(self) -> str:
        return f'# config_hash={self.config_hash} seed={self.seed}'

    def csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
        path = osp.join(self.out_dir, f'{name}.csv')
        with open(path, 'w', newline='', encoding='utf-8') as fo:
            fo.write(self.provenance + '\n')
            writer = csv.writer(fo, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        self.written.append(path)
        logger.info(f'Wrote {path}')
        return path

    def json(self, name: str, report: dict) -> str:
        path = osp.join(self.out_dir, f'{name}.json')
        obj = dict(report)
        obj['provenance'] = {'config_hash': self.config_hash, 'seed': self.seed,
                             'generated_at': datetime.now(timezone.utc).isoformat(timespec='seconds')}
        utils.save_json(obj, path)
        self.written.append(path)
        logger.info(f'Wrote {path}')
        return path


def read_csv(path: str):
    """(provenance line, header, rows as lists of strings)."""
    with open(path, 'r', newline='', encoding='utf-8') as fi:
        first = fi.readline().rstrip('\n')
        reader = csv.reader(fi)
        header = next(reader)
        return first, header, [row for row in reader]
