"""PointNet++ supernet, sampling/grouping geometry and cost accounting."""
