"""Fine-tune the 5-way classifier on a toy set and print the results table."""

from permlm.data import Label, LabeledExample
from permlm.metrics import render_table
from permlm.model import ModelConfig, TransformerWeights
from permlm.tokenizer import build_vocab
from permlm.training import FinetuneConfig, evaluate, finetune

train = [
    LabeledExample("super padam", Label.Positive),
    LabeledExample("semma mass", Label.Positive),
    LabeledExample("mokka film", Label.Negative),
    LabeledExample("worst ever", Label.Negative),
    LabeledExample("ok ok thaan", Label.MixedFeelings),
    LabeledExample("paravala", Label.MixedFeelings),
    LabeledExample("ithu enna", Label.UnknownState),
    LabeledExample("trailer eppo", Label.UnknownState),
]
vocab = build_vocab([e.text for e in train])
cfg = ModelConfig(n_layers=2, d_model=32, n_heads=4, d_ff=64, vocab_size=len(vocab), max_len=32, dropout=0.0)

# defaults: 4 epochs, peak lr 0.005
best, report = finetune(TransformerWeights.init(cfg, seed=0), train, train, vocab, FinetuneConfig(batch_size=1))
print(report.loss_table())
print("best epoch:", report.best_epoch)

loss, metrics = evaluate(best, train, vocab)
print(render_table(metrics, "tamil-english"))
