"""Reusable bot workflows: CI mirroring and reporting, PR lifecycle, backports."""
