# Utils module for hazard-dantzig