"""Unit conversion constants.

SI units (Pa, s, m) are used everywhere internally; days and MPa appear
only at the CLI/config boundary and in exported plot data.
"""

SECONDS_PER_DAY = 86_400.0
PA_PER_MPA = 1.0e6


def days_to_seconds(days):
    return days * SECONDS_PER_DAY


def seconds_to_days(seconds):
    return seconds / SECONDS_PER_DAY


def mpa_to_pa(mpa):
    return mpa * PA_PER_MPA


def pa_to_mpa(pa):
    return pa / PA_PER_MPA
