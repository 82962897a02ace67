"""dapflex: decentralized day-ahead planning with guaranteed energy reserves.

Each load unit schedules its appliances, battery and cooling with a MILP that
also sizes the positive/negative energy reserve it can guarantee; an
aggregator pools those reserves, splits demand-response requests
proportionally, and a Monte Carlo intra-day simulator verifies that the
declared reserves survive forecast errors.
"""

from .timegrid import (Forecast, PriceSet, Profile, TimeGrid, const_profile,
                       forecast, make_time_grid, profile, profile_energy)

__version__ = "0.1.0"
