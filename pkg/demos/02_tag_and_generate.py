"""
Tag, then generate
==================

A tagger learns where polite phrases belong in a neutral sentence and marks
those slots with [TAG]_j. A generator learns to fill the slots. Both are
small transformers here; the demo trains in about a minute and a half on one CPU.
"""

import torch

from taggen.corpus import Sentence
from taggen.decode import transfer
from taggen.markers import mine_markers
from taggen.seq2seq import ModelConfig, NoiseConfig, Seq2SeqModel, TrainConfig, train
from taggen.tagdata import make_add_pairs, make_generator_pairs
from taggen.tokenizer import train_bpe
from taggen.toy import politeness_corpus

torch.manual_seed(0)
neutral, polite = politeness_corpus(seed=0)
X1 = [Sentence(tuple(line.split())) for line in neutral]
X2 = [Sentence(tuple(line.split())) for line in polite]
_, to_polite = mine_markers(X1, X2)

# the tagger sees polite sentences with their markers deleted and learns to put tags back
add_pairs = make_add_pairs(X2, to_polite)
gen_pairs = make_generator_pairs(X2, to_polite)
print("tagger pair:   ", " ".join(add_pairs[0].input), "->", " ".join(add_pairs[0].output))
print("generator pair:", " ".join(gen_pairs[0].input), "->", " ".join(gen_pairs[0].output))

vocab = train_bpe(X1 + X2, vocab_size=500)
tagger = Seq2SeqModel(ModelConfig.from_preset("desk", vocab, seed=0), role="tagger")
generator = Seq2SeqModel(ModelConfig.from_preset("desk", vocab, seed=1))
train(tagger, add_pairs, vocab, TrainConfig.from_preset("desk", epochs=30))
# light input noise keeps the generator from memorizing exact contexts
train(generator, gen_pairs, vocab, TrainConfig.from_preset("desk", epochs=30, noise=NoiseConfig()))

# the intermediate tagged sentence is part of the output, so each step can be inspected
for line in ["send the report to finance today .", "check my invoice before lunch .", "fix the calendar ."]:
    r = transfer(tagger, generator, line.split(), vocab)
    print(f"\n  {line}\n  -> {r.tagged.text}\n  -> {r.text}")

# a tag that lands mid-sentence sometimes pulls in extra content; the evaluate
# stage counts such sentences with nontag_change_audit
