import numpy as np
from dbsfm.synth import default_cohort
from dbsfm.tokens import tokenize
from dbsfm.spectral import WelchConfig
from dbsfm.model import ModelConfig
from dbsfm.training import PretrainHyper, FinetuneHyper, pretrain, finetune
from dbsfm.evaluation import predict_tokens, pearson_r

cohort = default_cohort(n_subjects=8, days=2.0, master_seed=20240501)
wcfg = WelchConfig()
seqs = {}
for sid in cohort.subject_ids:
    seqs[sid] = tokenize(cohort.recording(sid), cohort.labels(sid), wcfg)
print("tokenized", flush=True)

for held in ("S01", "S05"):
    train_seqs = [s for sid in sorted(seqs) if sid != held for s in seqs[sid]]
    mcfg = ModelConfig()
    store, rep = pretrain(train_seqs, mcfg, PretrainHyper(epochs=50, seed=11))
    print(held, "pretrain val curve q:", " ".join("%.4f" % v for v in rep.val_loss[::5]), flush=True)
    for symptom, col in (("bradykinesia", 0), ("dyskinesia", 1)):
        tuned, ftrep = finetune(store, train_seqs, mcfg, FinetuneHyper(max_epochs=100, patience=5, seed=11), symptom)
        _, preds = predict_tokens(tuned, mcfg, seqs[held], symptom)
        truth = np.concatenate([s.labels[:, col] for s in seqs[held]])
        print(
            "%s %s: epochs=%d (%s) val %.4f -> best %.4f | held-out r = %.4f"
            % (held, symptom, ftrep.epochs_run, ftrep.stop_reason, ftrep.val_loss[0],
               min(ftrep.val_loss), pearson_r(truth, preds)),
            flush=True,
        )
        print("   val curve:", " ".join("%.3f" % v for v in ftrep.val_loss), flush=True)
