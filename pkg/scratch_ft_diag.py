import time
import numpy as np
from dbsfm.synth import default_cohort
from dbsfm.tokens import tokenize
from dbsfm.spectral import WelchConfig
from dbsfm.model import ModelConfig
from dbsfm.training import PretrainHyper, FinetuneHyper, pretrain, finetune, split_train_val
from dbsfm.evaluation import predict_tokens, pearson_r

cohort = default_cohort(n_subjects=8, days=2.0, master_seed=20240501)
wcfg = WelchConfig()
seqs = {}
for sid in cohort.subject_ids:
    seqs[sid] = tokenize(cohort.recording(sid), cohort.labels(sid), wcfg)
print("tokenized", flush=True)

held = "S01"
train_seqs = [s for sid in sorted(seqs) if sid != held for s in seqs[sid]]
mcfg = ModelConfig()
pre = PretrainHyper(epochs=50, seed=11)
store, rep = pretrain(train_seqs, mcfg, pre)
print("pretrain done: train %.4f -> %.4f ; val %.4f -> %.4f (min %.4f @ %d)" % (
    rep.train_loss[0], rep.train_loss[-1], rep.val_loss[0], rep.val_loss[-1],
    min(rep.val_loss), 1 + int(np.argmin(rep.val_loss))), flush=True)

for symptom in ("bradykinesia", "dyskinesia"):
    ft = FinetuneHyper(max_epochs=40, patience=1000, seed=11)
    tuned, ftrep = finetune(store, train_seqs, mcfg, ft, symptom)
    col = 0 if symptom == "bradykinesia" else 1
    _, preds = predict_tokens(tuned, mcfg, seqs[held], symptom)
    truth = np.concatenate([s.labels[:, col] for s in seqs[held]])
    print(symptom, "val curve:", " ".join("%.4f" % v for v in ftrep.val_loss), flush=True)
    print(symptom, "train curve:", " ".join("%.4f" % v for v in ftrep.train_loss[:20]), flush=True)
    print(symptom, "held-out r (best-val params):", pearson_r(truth, preds), flush=True)
    # r if we ignored early stopping and used final params:
