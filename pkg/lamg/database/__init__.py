"""
On-disk storage of generated problem corpora
"""
