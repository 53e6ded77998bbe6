"""
Leave-one-subject-out on a small corpus
=======================================

Three 10 minute subjects, both pipelines, a short network schedule. Each
fold trains on the other subjects and scores the held-out one with the
smoothed, channel-fused seizure probability.
"""

from neoseize import eeg_io, pipeline, training

cfg = eeg_io.SynthConfig(n_subjects=3, duration_s=600, seizure_duration_s=(40, 70), rng_seed=1)
subjects = [pipeline.prepare_subject(*eeg_io.generate_synthetic_subject(cfg, k))
            for k in range(cfg.n_subjects)]

short = training.TrainConfig(total_iterations=10, epochs_per_iteration=1024)
tables = [training.run_loo_experiment(subjects, "svm"),
          training.run_loo_experiment(subjects, "fcnn", train_cfg=short)]

for table in tables:
    print(f"{table.pipeline} ({table.seconds:.0f} s)")
    for sid, auc, auc90 in table.rows():
        print(f"  {sid:<10} AUC {auc:6.2f}  AUC90 {auc90:6.2f}")
