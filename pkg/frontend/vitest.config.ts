import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    environment: 'jsdom',
    include: ['test/**/*.test.ts'],
    // the loop test boots the real service and trains two small rounds
    testTimeout: 180_000,
    hookTimeout: 180_000,
  },
});
