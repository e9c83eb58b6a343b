"""
Mining style markers from two unpaired corpora
===============================================

Which phrases make a request sound polite? Score every shared n-gram by how
much more tf-idf weight it carries in the polite corpus, then keep the top
slice of the ranking.
"""

from taggen.corpus import Sentence
from taggen.markers import extract_markers, style_impact
from taggen.toy import politeness_corpus

neutral, polite = politeness_corpus(300, 300, seed=0)
X1 = [Sentence(tuple(line.split())) for line in neutral]
X2 = [Sentence(tuple(line.split())) for line in polite]

# eta > 1 means the n-gram leans polite; p is eta^0.75 normalized to sum to one
stats = style_impact(X1, X2)
print(f"{len(stats)} n-grams occur in both corpora")
print("most polite-leaning:")
for st in stats[:8]:
    print(f"  {' '.join(st.ngram):24s} eta={st.eta:6.2f}  p={st.p:.4f}")

# content words sit near eta = 1 and fall outside the top 10%
markers = extract_markers(stats, k=0.9, style_id="polite")
print(f"\nkept {len(markers)} markers; content n-gram 'the report' kept? "
      f"{('the', 'report') in markers.phrases}")
