# Core module for hazard-dantzig