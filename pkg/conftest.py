# keeps the repository root importable so test helpers can be shared
# (tests.test_oracle exports fixtures reused across modules)
