from .forecaster import AblationSwitches, Batch, ForecastModel, ModelConfig, stack_samples

__all__ = ["AblationSwitches", "Batch", "ForecastModel", "ModelConfig", "stack_samples"]
