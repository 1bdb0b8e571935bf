"""Run-configuration builders shared by the simulation tests."""

from crossbin.config import RunConfig


def noiseless(pump_power=0.05, duration=4.0, seed=7, **engine):
    """Lossless, dark-free, jitter-free detectors at a low pair rate."""
    return RunConfig.model_validate({
        "seed": seed, "duration": duration,
        "engine": engine,
        "source": {"pump_power": pump_power},
        "channel": {"loss_db_alice": 0.0, "loss_db_bob": 0.0},
        "alice": {"efficiency": 1.0, "dark_rate": 0.0, "jitter_sigma": 0.0},
        "bob": {"efficiency": 1.0, "dark_rate": 0.0, "jitter_sigma": 0.0, "mode": "free_running"},
    })
