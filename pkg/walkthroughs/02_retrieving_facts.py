"""
Retrieving commonsense facts
============================

Facts are ``subject relation object`` triples.  For each image a retriever
scores every triple against the caption and the detected object names,
keeps the top k, and lays the survivors out twice: as sentences and as a
graph whose nodes are entities and whose edges are the triples joining
them.
"""

from rmk.knowledge import FactTriple, HashedWordVectors, RelationIndex, fact_graph_layout, retrieve_candidates

store = [
    FactTriple("dog", "AtLocation", "park"),
    FactTriple("dog", "CapableOf", "running"),
    FactTriple("frisbee", "UsedFor", "playing"),
    FactTriple("park", "HasA", "grass"),
    FactTriple("boat", "AtLocation", "lake"),
    FactTriple("fridge", "UsedFor", "cooling"),
]

# HashedWordVectors gives each word a fixed pseudo-random unit vector.  Any
# mapping from word to vector can be passed instead, such as real
# pretrained embeddings.
vectors = HashedWordVectors(dim=50)
caption = "a dog catches a frisbee in the park"
concepts = ["dog", "frisbee"]

facts = retrieve_candidates(store, caption, concepts, k=4, vectors=vectors)
for rank, sf in enumerate(facts, 1):
    print(f"{rank}  {sf.score:.3f}  {sf.fact.description()}")

# Hashed vectors carry no meaning: words that do not match exactly get
# arbitrary cosines, some negative.  Only shared words count reliably,
# which is how a fact about boats can outrank "frisbee used for playing".

relations = RelationIndex(sorted({f.relation for f in store}))
layout = fact_graph_layout([sf.fact for sf in facts], relations)
print("entities:", layout.entities)
print("adjacency:")
print(layout.adjacency.astype(int))
# edge_fact points back at the candidate sentence that created each edge
print("edge -> fact index:")
print(layout.edge_fact)
