__all__ = ['scores', 'tables', 'predictions', 'rmse', 'r2', 'relative_rmse', 'SiteMetrics', 'site_metrics',
           'aggregate', 'ComparisonCell', 'comparison_cells', 'write_report']

from utils.metrics.scores import SiteMetrics, r2, relative_rmse, rmse, site_metrics
from utils.metrics.tables import ComparisonCell, aggregate, comparison_cells, write_report
