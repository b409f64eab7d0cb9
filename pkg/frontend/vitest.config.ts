import { defineConfig } from "vitest/config";

// Each test file boots its own annotation service (a real python process), so
// generous timeouts cover interpreter start-up on a loaded machine.
export default defineConfig({
  test: {
    environment: "node",
    include: ["tests/**/*.test.ts"],
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
