"""
How a fixed suffix games the automatic metrics
===============================================

Appending "but overall it was perfect" to every negative review flips a
bag-of-n-grams classifier and keeps BLEU-self high, yet no review was
actually rewritten.
"""

from taggen.classifier import accuracy, train_classifier
from taggen.corpus import Sentence
from taggen.evaluation import evaluate, format_table, naive_baseline
from taggen.toy import review_corpus

neg, pos = review_corpus(600, seed=0)
S = lambda line: Sentence(tuple(line.split()))  # noqa: E731
train_neg, test_neg = [S(x) for x in neg[:500]], [S(x) for x in neg[500:]]
train_pos, test_pos = [S(x) for x in pos[:500]], [S(x) for x in pos[500:]]
clf = train_classifier(train_pos, train_neg)
print(f"classifier accuracy on held-out reviews: {accuracy(clf, test_pos, test_neg):.2f}")

copy = evaluate(test_neg, test_neg, clf, target_label=1)
naive = evaluate(test_neg, [naive_baseline(s, 1) for s in test_neg], clf, target_label=1)
print(format_table({"copy": copy, "naive": naive}))
print("\nexample:", " ".join(naive_baseline(test_neg[0], 1).tokens))
