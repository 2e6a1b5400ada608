"""HTTP service layer (FastAPI) over the harness library."""
