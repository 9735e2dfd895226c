from .campaign import (
    CampaignConfig,
    CovariateSpec,
    DeviceSpec,
    ObservationSet,
    assemble,
    list_grids,
    load_config,
    load_spatial_stack,
    read_table,
    read_temporal,
    save_config,
    write_table,
)
from .grids import read_grid, resample_elevation, write_grid
from .timeaxis import (
    TrafficWindow,
    format_hour,
    hour_index,
    parse_timestamp,
    to_datetime,
    traffic_hours_filter,
    weekday_and_hour,
)
