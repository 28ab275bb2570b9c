"""Permutation-LM pretraining on a small repetitive corpus."""

from permlm.model import ModelConfig
from permlm.tokenizer import build_vocab
from permlm.training import PretrainConfig, pretrain

subjects = ["padam", "trailer", "song", "hero"]
verbs = ["semma mass", "romba super", "vera level", "konjam mokka"]
corpus = [f"{subjects[i % 4]} {verbs[(i // 4) % 4]}" for i in range(200)]

vocab = build_vocab(corpus)
print(len(vocab), "ids, characters by frequency:", repr("".join(vocab.tokens)))

config = PretrainConfig(epochs=4, batch_size=8, max_lr=3e-3, max_len=32, predict_fraction=0.5)
weights, report = pretrain(corpus, vocab, config, model_config=ModelConfig(dropout=0.0))
for record in report.epochs:
    print(f"epoch {record.epoch}: loss {record.train_loss:.4f}")
print(f"{weights.n_parameters():,} parameters, {report.wall_seconds:.1f}s")
