"""Fixed-width text tables for terminal output."""

import numpy as np


class TableFormatter:
    """Class used to render rows of values as an aligned text table."""

    def __init__(self, columns, float_format='{:.4f}', missing='-'):
        """Create a TableFormatter object

        :param columns: Column names, in display order
        :type columns: list
        :param float_format: Template applied to float values, defaults to '{:.4f}'
        :type float_format: str, optional
        :param missing: Text shown for absent or None values, defaults to '-'
        :type missing: str, optional
        """
        self.columns = list(columns)
        self.float_format = float_format
        self.missing = missing

    def _cell(self, value):
        if value is None:
            return self.missing
        if isinstance(value, (float, np.floating)):
            return self.float_format.format(float(value))
        return str(value)

    def format(self, rows):
        """Render a list of dicts keyed by column name.

        :rtype: str
        """
        cells = [[self._cell(row.get(column)) for column in self.columns] for row in rows]
        widths = [max([len(column)] + [len(line[i]) for line in cells])
                  for i, column in enumerate(self.columns)]

        def render(line):
            return '  '.join(cell.rjust(width) for cell, width in zip(line, widths)).rstrip()

        lines = [render(self.columns), render(['-' * width for width in widths])]
        lines += [render(line) for line in cells]
        return '\n'.join(lines)


def format_angle_matrix(angles, labels=None, float_format='{:.2f}'):
    """Render a square matrix of angles (degrees) with row and column labels."""
    angles = np.asarray(angles, dtype=np.float64)
    labels = labels or [f'g_f{i + 1}' for i in range(angles.shape[0])]
    formatter = TableFormatter([''] + labels, float_format=float_format)
    rows = [{'': label, **{other: angles[i, j] for j, other in enumerate(labels)}}
            for i, label in enumerate(labels)]
    return formatter.format(rows)
