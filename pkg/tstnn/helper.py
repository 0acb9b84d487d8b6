"""Helper Functions"""
import json
import os
from typing import Any, Optional

from tstnn.exceptions import ConfigError, UsageError
from tstnn.framing import AudioBuffer, read_wav
from tstnn.model import ModelConfig
from tstnn.synth import SynthSpec, synth_batch
from tstnn.training import TrainConfig


def read_json(file_path: str) -> dict[str, Any]:
    """Reads a JSON object from a file.

        Args:
            file_path (str): The path to a JSON text file.

        Returns:
            dict: The decoded object.
    """

    try:
        with open(file_path, 'r') as json_file:
            values = json.load(json_file)
    except OSError as e:
        raise ConfigError(f'cannot read {file_path}: {e.strerror}', field='config')
    except json.JSONDecodeError as e:
        raise ConfigError(f'{file_path} is not valid JSON: {e.msg}', field='config')
    if not isinstance(values, dict):
        raise ConfigError(f'{file_path} must hold a JSON object', field='config')
    return values


def split_run_config(values: dict[str, Any]) -> tuple[ModelConfig, TrainConfig]:
    model_keys = ModelConfig.field_names()
    train_keys = TrainConfig.field_names()
    unknown = sorted(set(values) - model_keys - train_keys)
    if unknown:
        raise ConfigError('unknown config key', field=unknown[0])
    try:
        model_config = ModelConfig.from_dict({k: v for k, v in values.items() if k in model_keys})
        train_config = TrainConfig.from_dict({k: v for k, v in values.items() if k in train_keys})
    except TypeError as e:
        raise ConfigError(f'malformed config value: {e}', field='config')
    return model_config, train_config


def load_run_config(file_path: Optional[str]) -> tuple[ModelConfig, TrainConfig]:
    """Reads a flat JSON run config; defaults for both dataclasses when no path is given."""

    if file_path is None:
        return ModelConfig(), TrainConfig()
    return split_run_config(read_json(file_path))


def write_tsv(file_path: Optional[str], lines: list[str]) -> None:
    """Writes lines to a file, or prints them when no path is given."""

    if file_path is None:
        for line in lines:
            print(line)
        return
    with open(file_path, 'w') as tsv_file:
        tsv_file.writelines(line + '\n' for line in lines)


def list_wavs(files_dir: str) -> dict[str, str]:
    """Returns WAV file names in a directory mapped to their paths."""

    if not os.path.isdir(files_dir):
        raise UsageError(f'{files_dir} is not a directory', field='dir')
    return {f: os.path.join(files_dir, f) for f in sorted(os.listdir(files_dir))
            if f.lower().endswith('.wav')}


def pair_wavs(clean_dir: str, noisy_dir: str) -> list[tuple[str, str, str]]:
    """Pairs clean and noisy WAV files by file name.

        Returns:
            list: ``(name, clean path, noisy path)`` per pair, sorted by name.

        Raises:
            UsageError: if a file in either directory has no partner, or none exist.
    """

    clean, noisy = list_wavs(clean_dir), list_wavs(noisy_dir)
    unpaired = sorted(set(clean) ^ set(noisy))
    if unpaired:
        raise UsageError(f'{unpaired[0]} has no partner in the other directory', field='files')
    if not clean:
        raise UsageError(f'no WAV files in {clean_dir}', field='files')
    return [(name, clean[name], noisy[name]) for name in clean]


def read_pairs(clean_dir: str, noisy_dir: str) -> list[tuple[str, AudioBuffer, AudioBuffer]]:
    return [(name, read_wav(clean_path), read_wav(noisy_path))
            for name, clean_path, noisy_path in pair_wavs(clean_dir, noisy_dir)]


def load_training_data(cfg: TrainConfig, model_config: ModelConfig) -> list[tuple[AudioBuffer, AudioBuffer]]:
    """WAV pairs from ``data_dir/clean`` and ``data_dir/noisy``, or synthetic mixtures."""

    if cfg.data_dir:
        pairs = []
        for name, clean, noisy in read_pairs(os.path.join(cfg.data_dir, 'clean'),
                                             os.path.join(cfg.data_dir, 'noisy')):
            if clean.sample_rate != model_config.sample_rate or noisy.sample_rate != model_config.sample_rate:
                raise ConfigError(f'{name} is not at {model_config.sample_rate} Hz', field='sample_rate')
            pairs.append((clean, noisy))
        return pairs
    spec = SynthSpec(cfg.synth_snr_db, cfg.synth_clip_samples, model_config.sample_rate,
                     cfg.synth_noise, cfg.seed)
    return synth_batch(spec, cfg.synth_count)
