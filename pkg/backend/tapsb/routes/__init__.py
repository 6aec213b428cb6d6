"""Run browser routers."""
