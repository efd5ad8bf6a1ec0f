from mrfkit.perf import tune_allocator

tune_allocator()
