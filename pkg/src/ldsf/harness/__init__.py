"""Synthetic data, training, evaluation and reporting around the two streams."""
from .dataset import (LFM_INTERVALS, PROTOCOLS, Sample, add_noise, build_splits, dataset_radar,
                      extract_samples, in_interval, load_dataset, measured_snr_db, save_dataset,
                      soc_split, synth_dataset)
from .templates import Component, TargetTemplate, default_templates, render_scene
from .train import (ABLATIONS, Metrics, Prepared, TrainConfig, TrainResult, checkpoint_hash,
                    evaluate, evaluate_store, load_model, mean_intra_class_cut, prepare, save_result,
                    train_ldsf)
from .report import aggregate, ofa_report, prune_report, run_summary, trend_table, write_json
