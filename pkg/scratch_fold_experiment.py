import time
import numpy as np
from dbsfm.synth import default_cohort
from dbsfm.tokens import tokenize
from dbsfm.spectral import WelchConfig
from dbsfm.model import ModelConfig
from dbsfm.training import PretrainHyper, FinetuneHyper
from dbsfm.evaluation import run_fold

cohort = default_cohort(n_subjects=8, days=2.0, master_seed=20240501)
wcfg = WelchConfig()
seqs = {}
t0 = time.time()
for sid in cohort.subject_ids:
    seqs[sid] = tokenize(cohort.recording(sid), cohort.labels(sid), wcfg)
print("synth+tokenize 8x2d: %.1f s; per-subject seqs: %d" % (time.time() - t0, len(seqs["S01"])), flush=True)

mcfg = ModelConfig()
pre = PretrainHyper(epochs=50, seed=11)
ft = FinetuneHyper(max_epochs=100, seed=11)

for held in ("S01", "S05"):
    t0 = time.time()
    fold = run_fold(seqs, held, mcfg, pre, ft)
    print(
        "fold %s: %.1f s | pre loss %.4f->%.4f | ft brady ep=%d (%s) val %.4f->%.4f | r=%s"
        % (
            held,
            time.time() - t0,
            fold.pretrain_report.train_loss[0],
            fold.pretrain_report.train_loss[-1],
            fold.finetune_reports["bradykinesia"].epochs_run,
            fold.finetune_reports["bradykinesia"].stop_reason,
            fold.finetune_reports["bradykinesia"].val_loss[0],
            min(fold.finetune_reports["bradykinesia"].val_loss),
            {k: round(v, 4) for k, v in fold.r.items()},
        ),
        flush=True,
    )
