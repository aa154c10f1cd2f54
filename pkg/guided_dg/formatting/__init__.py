from .format import (
    TableFormatter,
    format_angle_matrix
)
