"""Episode environments over the SSDP formulations."""
