from .bundle import RunBundle, load_bundles
from .figures import (plot_fleet_states, plot_noise_delay_contour,
                      plot_performance, plot_resilience_bars,
                      plot_tt_vs_distance, upper_envelope)

__all__ = ["RunBundle", "load_bundles", "plot_fleet_states",
           "plot_noise_delay_contour", "plot_performance",
           "plot_resilience_bars", "plot_tt_vs_distance", "upper_envelope"]
