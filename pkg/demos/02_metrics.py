"""
Caption metrics and answer grading by hand
==========================================

Small worked numbers for BLEU-4, METEOR-lite and CIDEr, then the accuracy
arithmetic used for the question-answering task.
"""
from diagcap.metrics import AccuracyReport, bleu, cider, extract_letters, meteor_lite, round1, tokenize

ref = tokenize("Step 1: Start. Step 2: Attach UE to the network.")
good = tokenize("Step 1: Start. Step 2: Attach UE to the network.")
close = tokenize("Step 1: Start. Step 2: Attach the UE to network.")
poor = tokenize("The diagram shows a network.")

# CIDEr weights n-grams by rarity across a reference corpus; with a single
# document every weight is zero, so give it some neighbours.
corpus = [[ref]] + [[tokenize(t)] for t in (
    "Step 1: Start. Step 2: Release the RRC connection.",
    "Step 1: Start. Step 2: Page the UE.",
    "Step 1: Start. Step 2: Restart the board.")]

print("tokens:", ref)
for name, cand in [("identical", good), ("reworded", close), ("unrelated", poor)]:
    print(f"{name:10s} BLEU-4={bleu(cand, [ref]):.4f}  METEOR={meteor_lite(cand, ref):.4f}  "
          f"CIDEr={cider(cand, [ref], corpus_refs=corpus):.4f}")

# A model may wrap its letters in prose; an explicit "Answer:" marker wins.
for reply in ["Answer: B, D", "The answer is: a and c", "B", "I would pick a safe default", "Both A and C look right. Answer: C"]:
    print(f"{reply!r:40} -> {extract_letters(reply)}")

# Overall accuracy is the pooled ratio, not the mean of the two per-type accuracies.
acc = AccuracyReport(a_s_r=150, a_s_t=200, a_m_r=40, a_m_t=100)
print(f"\nsingle {round1(acc.prec_s)}%  multi {round1(acc.prec_m)}%  "
      f"overall {round1(acc.prec_a)}%  (naive mean would be {round1((acc.prec_s + acc.prec_m) / 2)}%)")
